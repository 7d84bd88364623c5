use super::{Graph, NumericsError, Tensor, Var};

/// Worst disagreement found in one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub block: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<(Graph, Vec<Var>, Var), NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let vars = params.iter().map(|p| g.param(p)).collect::<Result<Vec<_>, _>>()?;
    let loss = f(&mut g, &vars)?;
    if g.tensor(loss).len() != 1 {
        return Err(NumericsError::NonScalarLoss(g.shape(loss).to_vec()));
    }
    Ok((g, vars, loss))
}

/// Compares tape gradients of the scalar `f` against central differences
/// `(f(p+ε) − f(p−ε)) / 2ε`, one coordinate at a time.
///
/// Relative error per coordinate is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    if !(eps > 0.0) {
        return Err(NumericsError::Invalid {
            op: "grad_check",
            msg: format!("step must be positive, got {eps}"),
        });
    }
    let (mut g, vars, loss) = evaluate(&f, params)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut blocks = Vec::with_capacity(params.len());
    for (bi, grads) in analytic.iter().enumerate() {
        let mut worst = BlockError {
            block: bi,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (ci, &a) in grads.iter().enumerate() {
            let orig = work[bi].values()[ci];
            work[bi].values_mut()[ci] = orig + eps;
            let (gp, _, lp) = evaluate(&f, &work)?;
            let up = gp.value(lp)[0];
            work[bi].values_mut()[ci] = orig - eps;
            let (gm, _, lm) = evaluate(&f, &work)?;
            let down = gm.value(lm)[0];
            work[bi].values_mut()[ci] = orig;
            let n = (up - down) / (2.0 * eps);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            if rel > worst.max_rel_error {
                worst = BlockError {
                    block: bi,
                    max_rel_error: rel,
                    worst_index: ci,
                    analytic: a,
                    numeric: n,
                };
            }
        }
        blocks.push(worst);
    }
    Ok(GradCheckReport { blocks, tolerance: tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_agreement_and_rejects_bad_inputs() {
        let cube = |g: &mut Graph, v: &[Var]| {
            let sq = g.mul(v[0], v[0])?;
            let cu = g.mul(sq, v[0])?;
            g.sum(cu)
        };
        let x = Tensor::vector(vec![0.5, -1.5, 2.0]);
        let report = grad_check(cube, std::slice::from_ref(&x), 1e-5, 1e-8).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.blocks.len(), 1);

        assert!(grad_check(cube, std::slice::from_ref(&x), 0.0, 1e-8).is_err());
        let not_scalar = |g: &mut Graph, v: &[Var]| g.mul(v[0], v[0]);
        assert!(matches!(grad_check(not_scalar, &[x], 1e-5, 1e-8), Err(NumericsError::NonScalarLoss(_))));
    }
}
