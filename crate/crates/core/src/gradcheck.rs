//! Central-difference verification of tape gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub h: f64,
    pub tol: f64,
    /// Relative errors use `max(|analytic|, |numeric|, floor · max(1, |f|))`
    /// as denominator so exact zeros do not divide by rounding noise.
    pub floor: f64,
    /// If a finite-difference probe flips any ReLU/clamp sign the evaluation
    /// point is moved by uniform noise of this size and the check restarts.
    pub nudge_scale: f64,
    pub max_nudges: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            nudge_scale: 1e-3,
            max_nudges: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    pub nudges: usize,
    pub value: f64,
    pub passed: bool,
}

/// Compares [`Tape::backward`] against central differences for every
/// coordinate of every parameter in `point`. `f` must be deterministic.
pub fn grad_check<F>(mut f: F, point: &ParamStore, cfg: &GradCheck) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut work = point.clone();
    work.zero_grad();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut nudges = 0;
    'attempt: loop {
        let mut tape = Tape::new();
        let loss = f(&mut tape, &work)?;
        let base_sig = tape.kink_signature();
        let value = tape.scalar(loss);
        let mut analytic = work.clone();
        analytic.zero_grad();
        tape.backward(loss, &mut analytic)?;

        let denom_floor = cfg.floor * value.abs().max(1.0);
        let mut report = GradCheckReport {
            max_rel_err: 0.0,
            worst_param: String::new(),
            worst_index: 0,
            checked: 0,
            nudges,
            value,
            passed: true,
        };
        let ids: Vec<_> = work.ids().collect();
        for id in ids {
            let grad = analytic
                .get(id)
                .grad()
                .map(<[f64]>::to_vec)
                .unwrap_or_default();
            for k in 0..work.get(id).len() {
                let orig = work.get(id).values()[k];
                let mut probe = |delta: f64, work: &mut ParamStore| -> Result<(f64, bool)> {
                    work.get_mut(id).values_mut()[k] = orig + delta;
                    let mut t = Tape::new();
                    let l = f(&mut t, work)?;
                    let same = t.kink_signature() == base_sig;
                    Ok((t.scalar(l), same))
                };
                let (fp, same_p) = probe(cfg.h, &mut work)?;
                let (fm, same_m) = probe(-cfg.h, &mut work)?;
                work.get_mut(id).values_mut()[k] = orig;
                if !(same_p && same_m) {
                    if nudges >= cfg.max_nudges {
                        // Give up on moving; report what the probe saw.
                    } else {
                        nudges += 1;
                        for pid in work.ids().collect::<Vec<_>>() {
                            for v in work.get_mut(pid).values_mut() {
                                *v += rng.random_range(-cfg.nudge_scale..cfg.nudge_scale);
                            }
                        }
                        continue 'attempt;
                    }
                }
                let numeric = (fp - fm) / (2.0 * cfg.h);
                let a = grad.get(k).copied().unwrap_or(0.0);
                let denom = a.abs().max(numeric.abs()).max(denom_floor);
                let rel = (a - numeric).abs() / denom;
                report.checked += 1;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst_param = String::from(work.name(id));
                    report.worst_index = k;
                }
            }
        }
        report.passed = report.max_rel_err < cfg.tol;
        return Ok(report);
    }
}
