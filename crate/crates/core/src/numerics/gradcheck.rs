use super::param::ParamStore;
use super::tape::{Graph, NodeId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − fd| / max(1, |fd|)` over the checked entries.
    pub max_rel_err: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Compare tape gradients with central finite differences.
///
/// `f` builds a scalar loss on a fresh graph from the current store values. Every
/// entry of every parameter is perturbed unless `max_entries_per_param` caps it,
/// in which case entries are taken at an even stride.
pub fn grad_check<F>(
    store: &ParamStore,
    eps: f64,
    max_entries_per_param: Option<usize>,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::Config(format!("finite-difference eps {eps} outside [1e-6, 1e-4]")));
    }
    let mut g = Graph::new();
    let root = f(&mut g, store)?;
    let analytic = g.backward(root, store)?;

    let mut work = store.clone();
    let mut eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let r = f(&mut g, s)?;
        let v = g.value(r);
        if v.len() != 1 {
            return Err(Error::Shape(format!("grad check needs a scalar, got {:?}", v.shape())));
        }
        let x = v.item();
        if !x.is_finite() {
            return Err(Error::NonFinite("grad check objective".into()));
        }
        Ok(x)
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        entries_checked: 0,
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.value(id).len();
        let stride = match max_entries_per_param {
            Some(cap) if cap > 0 && n > cap => n.div_ceil(cap),
            _ => 1,
        };
        for k in (0..n).step_by(stride) {
            let orig = store.value(id).data()[k];
            work.value_mut(id).data_mut()[k] = orig + eps;
            let up = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig - eps;
            let down = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * eps);
            let a = analytic.get(id).data()[k];
            let rel = (a - fd).abs() / fd.abs().max(1.0);
            report.entries_checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel.max(report.max_rel_err);
                report.worst = Some((store.get(id).name.clone(), k));
            }
        }
    }
    Ok(report)
}
