//! Central finite-difference verification of analytic gradients.
//!
//! Used by unit and acceptance tests for every learnable parameter group.
//! For each parameter the comparison is a vector relative error over a
//! sample of entries (largest-magnitude gradients plus an even spread), so
//! single near-zero entries cannot mask or manufacture a failure.

use crate::graph::{Graph, Value};
use crate::params::ParamStore;

pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub rel_err: f32,
}

/// Relative error ‖analytic − fd‖₂ / max(‖analytic‖₂, ‖fd‖₂) per parameter,
/// over at most `max_entries` sampled entries. Parameters whose analytic and
/// fd gradients are both numerically zero report an error of 0.
pub fn check_gradients(
    store: &mut ParamStore,
    build: &mut dyn FnMut(&mut Graph, &ParamStore) -> Value,
    filter: &dyn Fn(&str) -> bool,
    max_entries: usize,
) -> Vec<GroupReport> {
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    assert_eq!(g.value(loss).numel(), 1, "gradient check needs a scalar loss");
    let grads = g.backward(loss, store);

    let ids: Vec<usize> = (0..store.len()).filter(|&id| filter(store.name(id))).collect();
    let mut reports = Vec::with_capacity(ids.len());
    for id in ids {
        let numel = store.get(id).numel();
        let analytic: Vec<f32> = match grads.get(id) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; numel],
        };
        let indices = sample_indices(&analytic, max_entries);

        let mut an_norm = 0.0f64;
        let mut fd_norm = 0.0f64;
        let mut diff_norm = 0.0f64;
        for &i in &indices {
            let orig = store.get(id).data()[i];
            let eps = 2e-2 * orig.abs().max(1.0);
            let mut eval_at = |x: f32| {
                store.get_mut(id).data_mut()[i] = x;
                let mut g = Graph::new();
                let v = build(&mut g, store);
                g.value(v).item() as f64
            };
            let fd_full = (eval_at(orig + eps) - eval_at(orig - eps)) / (2.0 * eps as f64);
            let fd_half =
                (eval_at(orig + 0.5 * eps) - eval_at(orig - 0.5 * eps)) / (eps as f64);
            store.get_mut(id).data_mut()[i] = orig;
            // Richardson extrapolation cancels the O(eps^2) truncation term,
            // so the larger step keeps f32 rounding noise small too
            let fd = (4.0 * fd_half - fd_full) / 3.0;
            let an = analytic[i] as f64;
            an_norm += an * an;
            fd_norm += fd * fd;
            diff_norm += (an - fd) * (an - fd);
        }
        let denom = an_norm.sqrt().max(fd_norm.sqrt());
        let rel = if denom < 1e-7 {
            0.0
        } else {
            (diff_norm.sqrt() / denom) as f32
        };
        reports.push(GroupReport {
            name: store.name(id).to_string(),
            checked: indices.len(),
            rel_err: rel,
        });
    }
    reports
}

/// Largest-|g| half plus an even spread across the tensor.
fn sample_indices(analytic: &[f32], max_entries: usize) -> Vec<usize> {
    let n = analytic.len();
    if n <= max_entries {
        return (0..n).collect();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        analytic[b]
            .abs()
            .partial_cmp(&analytic[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut picked: Vec<usize> = order[..max_entries / 2].to_vec();
    let spread = max_entries - picked.len();
    for j in 0..spread {
        picked.push(j * n / spread);
    }
    picked.sort_unstable();
    picked.dedup();
    picked
}

/// Assert helper: every filtered parameter group must match within `tol`.
pub fn assert_gradients_match(
    store: &mut ParamStore,
    build: &mut dyn FnMut(&mut Graph, &ParamStore) -> Value,
    filter: &dyn Fn(&str) -> bool,
    max_entries: usize,
    tol: f32,
) {
    let reports = check_gradients(store, build, filter, max_entries);
    assert!(!reports.is_empty(), "gradient check matched no parameters");
    for r in &reports {
        assert!(
            r.rel_err < tol,
            "gradient mismatch for {}: rel err {} over {} entries (tol {})",
            r.name,
            r.rel_err,
            r.checked,
            tol
        );
    }
}
