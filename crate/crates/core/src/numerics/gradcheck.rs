use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Var};
use crate::Result;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates sampled per parameter; parameters smaller than this are
    /// checked exhaustively.
    pub coords_per_param: usize,
    pub seed: u64,
    /// Multiplier applied to the analytic gradient before comparison. Any
    /// value other than 1 is a negative control and should fail.
    pub grad_scale: f64,
    pub report_top: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, tol: 1e-3, coords_per_param: 8, seed: 0, grad_scale: 1.0, report_top: 5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Offender {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
    /// Largest errors first.
    pub worst: Vec<Offender>,
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradcheck {}: {} coordinates, max relative error {:.3e} (tol {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.checked,
            self.max_rel_err,
            self.tol
        )?;
        for o in &self.worst {
            writeln!(
                f,
                "  {}[{}] analytic={:.6e} numeric={:.6e} rel={:.3e}",
                o.param, o.index, o.analytic, o.numeric, o.rel_err
            )?;
        }
        Ok(())
    }
}

/// Compares tape gradients of a scalar `forward` against central finite
/// differences on sampled coordinates of every trainable parameter.
///
/// The error measure is `|analytic − numeric| / max(1, |analytic|)`.
pub fn gradcheck<F>(store: &mut ParamStore, forward: F, opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = forward(&mut tape, store)?;
    let grads = tape.backward(loss)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let l = forward(&mut tape, store)?;
        Ok(tape.value(l).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut all = Vec::new();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let Some(g) = grads.param(id).cloned() else { continue };
        let n = store.get(id).value.len();
        let coords: Vec<usize> = if n <= opts.coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + opts.eps;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig - opts.eps;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.eps);
            let analytic = g.data()[i] * opts.grad_scale;
            let rel_err = (analytic - numeric).abs() / analytic.abs().max(1.0);
            all.push(Offender { param: store.get(id).name.clone(), index: i, analytic, numeric, rel_err });
        }
    }
    all.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    let max_rel_err = all.first().map_or(0.0, |o| o.rel_err);
    let checked = all.len();
    all.truncate(opts.report_top);
    Ok(GradcheckReport { checked, max_rel_err, tol: opts.tol, passed: max_rel_err <= opts.tol, worst: all })
}
