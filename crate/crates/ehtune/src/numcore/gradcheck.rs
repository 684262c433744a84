use indexmap::IndexMap;

use super::{Graph, NodeId, ParamStore};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// (parameter name, max relative error over its elements)
    pub per_param: Vec<(String, f32)>,
    pub max_rel_err: f32,
}

/// Compare analytic gradients against central finite differences.
///
/// `build` must construct a scalar loss from the registered parameters and
/// be deterministic. Reported error per element is
/// |analytic − numeric| / max(|analytic|, |numeric|, 0.1): the floor turns
/// the criterion into an absolute one for near-zero gradients, where f32
/// forward rounding (~1e-5 on the loss) dominates any true signal.
pub fn grad_check<F>(params: &ParamStore, build: F, h: f32) -> GradCheckReport
where
    F: Fn(&mut Graph, &IndexMap<String, NodeId>) -> NodeId,
{
    let eval = |p: &ParamStore| -> (f32, IndexMap<String, Vec<f32>>) {
        let mut g = Graph::new();
        let nodes = p.register(&mut g, true);
        let loss = build(&mut g, &nodes);
        g.backward(loss).expect("grad_check loss must be scalar");
        let grads = nodes
            .iter()
            .map(|(name, id)| {
                let len = g.value(*id).numel();
                let grad = g.grad(*id).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; len]);
                (name.clone(), grad)
            })
            .collect();
        (g.value(loss).data()[0], grads)
    };

    let (_, analytic) = eval(params);

    let mut per_param = Vec::new();
    let mut max_rel = 0.0f32;
    for (name, _) in params.iter() {
        let mut worst = 0.0f32;
        let n = params.get(name).unwrap().numel();
        for idx in 0..n {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[idx] += h;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[idx] -= h;
            let lp = eval(&plus).0;
            let lm = eval(&minus).0;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[name][idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(0.1);
            worst = worst.max(rel);
        }
        max_rel = max_rel.max(worst);
        per_param.push((name.to_string(), worst));
    }
    GradCheckReport { per_param, max_rel_err: max_rel }
}
