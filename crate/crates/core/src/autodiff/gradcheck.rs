use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::AutodiffError;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Larger parameters are checked on a seeded random subset of coordinates.
    pub max_coords_per_param: usize,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero on both sides do not divide by zero.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, max_coords_per_param: 24, floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// `(parameter, flat index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compare analytic gradients of `f` with central differences.
///
/// `f` must build the same scalar loss every time it is called on a store
/// with the same values. Frozen parameters are skipped.
pub fn check_gradients<E, F>(store: &mut ParamStore, f: F, opts: GradCheckOptions) -> Result<GradCheckReport, E>
where
    E: From<AutodiffError>,
    F: Fn(&mut Graph<'_>) -> Result<Var, E>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let eval = |store: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::inference(store);
        let loss = f(&mut g)?;
        Ok(g.value(loss).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport { max_rel_error: 0.0, coords_checked: 0, worst: None };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.get(id).frozen {
            continue;
        }
        let n = store.get(id).value.len();
        let coords: Vec<usize> = if n <= opts.max_coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for k in coords {
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + opts.step;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig - opts.step;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.get(id).map_or(0.0, |t| t.data()[k]);
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            let rel = (a - numeric).abs() / denom;
            report.coords_checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.get(id).name.clone(), k, a, numeric));
            }
        }
    }
    Ok(report)
}
