//! Named linear layers and MLPs over a [`Tape`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::params::{ParamSpec, ParamStore};
use crate::tape::{Tape, Var};

pub fn linear_specs(name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Vec<ParamSpec> {
    let mut v = alloc::vec![ParamSpec::weight(format!("{name}.w"), fan_in, fan_out)];
    if bias {
        v.push(ParamSpec::bias(format!("{name}.b"), fan_out));
    }
    v
}

/// `x · W (+ b)`; the bias is used when `{name}.b` exists in the store.
pub fn linear(tape: &mut Tape, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = tape.param(store, store.id(&format!("{name}.w"))?);
    let y = tape.matmul(x, w)?;
    match store.id(&format!("{name}.b")) {
        Ok(b) => {
            let b = tape.param(store, b);
            tape.add_row(y, b)
        }
        Err(_) => Ok(y),
    }
}

/// Layer names of an MLP: `{name}.0`, `{name}.1`, ...
pub fn mlp_layer_name(name: &str, k: usize) -> String {
    format!("{name}.{k}")
}

/// Linear layers through `dims` (so `dims.len() − 1` layers), all biased.
pub fn mlp_specs(name: &str, dims: &[usize]) -> Vec<ParamSpec> {
    dims.windows(2)
        .enumerate()
        .flat_map(|(k, w)| linear_specs(&mlp_layer_name(name, k), w[0], w[1], true))
        .collect()
}

/// ReLU between layers, none after the last.
pub fn mlp(tape: &mut Tape, store: &ParamStore, name: &str, layers: usize, x: Var) -> Result<Var> {
    let mut h = x;
    for k in 0..layers {
        h = linear(tape, store, &mlp_layer_name(name, k), h)?;
        if k + 1 < layers {
            h = tape.relu(h);
        }
    }
    Ok(h)
}
