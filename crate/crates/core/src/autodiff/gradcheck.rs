use super::{AutodiffError, Graph, ParamId, ParamStore, Var};

/// Compares reverse-mode gradients of a scalar function of the parameters
/// against central finite differences.
///
/// `f` builds the graph for one evaluation and returns its scalar root. It is
/// called once for the analytic gradient and twice per checked entry. When
/// `entries` is `None` every entry of `param` is checked.
///
/// Returns `max_i |fd_i − g_i| / (|g_i| + 1e-8)`.
pub fn finite_difference_check<F>(
    store: &ParamStore,
    param: ParamId,
    h: f64,
    entries: Option<&[usize]>,
    f: F,
) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, AutodiffError>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(AutodiffError::Contract(format!("finite-difference step must be positive, got {h}")));
    }
    let mut g = Graph::new();
    let root = f(&mut g, store)?;
    let grads = g.backward(root)?;
    let analytic = grads
        .param(param)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; store.get(param).numel()]);

    let all: Vec<usize>;
    let entries = match entries {
        Some(e) => e,
        None => {
            all = (0..analytic.len()).collect();
            &all
        }
    };

    let mut probe = store.clone();
    let eval = |probe: &ParamStore| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let root = f(&mut g, probe)?;
        g.value(root).item()
    };
    let mut worst = 0.0f64;
    for &i in entries {
        let base = store.get(param).data()[i];
        probe.get_mut(param).data_mut()[i] = base + h;
        let plus = eval(&probe)?;
        probe.get_mut(param).data_mut()[i] = base - h;
        let minus = eval(&probe)?;
        probe.get_mut(param).data_mut()[i] = base;
        let fd = (plus - minus) / (2.0 * h);
        let err = (fd - analytic[i]).abs() / (analytic[i].abs() + 1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
