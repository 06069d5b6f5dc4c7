//! Central finite-difference checks of tape gradients.

use rand::Rng;

use crate::params::{Grads, ParamId, ParamStore};

/// Floor on the denominator of [`rel_error`]. It sits above the roundoff of
/// a central difference at `h = 1e-5` (about `1e-11` times the loss), so
/// gradients that are exactly zero analytically do not register as errors.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
}

/// Central difference of `f` with respect to one scalar parameter entry.
/// The entry is restored bit-exactly afterwards.
pub fn finite_difference(store: &mut ParamStore, id: ParamId, index: usize, h: f64, f: &mut impl FnMut(&ParamStore) -> f64) -> f64 {
    let orig = store.value(id).data()[index];
    store.value_mut(id).data_mut()[index] = orig + h;
    let plus = f(store);
    store.value_mut(id).data_mut()[index] = orig - h;
    let minus = f(store);
    store.value_mut(id).data_mut()[index] = orig;
    (plus - minus) / (2.0 * h)
}

/// Compares analytic gradients with central differences on `samples` random
/// entries of trainable parameters. Parameters are chosen uniformly, then an
/// entry uniformly within the parameter. `loss` returns the scalar loss and
/// its gradients for the given store.
pub fn check_params(
    store: &mut ParamStore,
    samples: usize,
    h: f64,
    rng: &mut impl Rng,
    mut loss: impl FnMut(&ParamStore) -> (f64, Grads),
) -> GradCheckReport {
    let (_, grads) = loss(store);
    let ids: Vec<ParamId> = store.iter().filter(|(_, p)| !p.frozen).map(|(id, _)| id).collect();
    assert!(!ids.is_empty(), "no trainable parameters");
    let mut entries = Vec::with_capacity(samples);
    for _ in 0..samples {
        let id = ids[rng.random_range(0..ids.len())];
        let index = rng.random_range(0..store.value(id).len());
        let analytic = grads.get(id).map_or(0.0, |g| g.data()[index]);
        let numeric = finite_difference(store, id, index, h, &mut |s| loss(s).0);
        entries.push(GradCheckEntry {
            param: store.get(id).name.clone(),
            index,
            analytic,
            numeric,
            rel_error: rel_error(analytic, numeric),
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    GradCheckReport { entries, max_rel_error }
}
