//! Entropically regularized optimal transport between the characters of two
//! mentions, solved by Sinkhorn iteration.
//!
//! Two entry points compute the same plan:
//! - [`sinkhorn`] works on plain buffers and is used for inspection and
//!   matrix dumps;
//! - [`sinkhorn_on_tape`] records every iteration as differentiable
//!   primitives so gradients reach the cost matrix.
//!
//! Iteration runs in the scaling domain (`u`, `v`). If `exp(−λC)` leaves the
//! normal floating-point range or a non-finite value appears, the solve is
//! restarted once in the log domain.

use crate::diffmath::{DiffError, Scalar, Tape, Tensor, Var};
use crate::encoder::SimilarityMatrix;
use crate::{Error, Result};

/// `C[i][j] = S_max − S[i][j]` over the valid block.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub values: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
}

/// `|m|×|m'|` nonnegative plan.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub values: Tensor<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// entropic regularizer λ
    pub lambda: f64,
    /// iteration cap T
    pub max_iters: usize,
    /// L1 marginal residual at which iteration stops early
    pub tol: f64,
    /// floor applied to the scaling denominators
    pub floor: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { lambda: 10.0, max_iters: 50, tol: 1e-6, floor: 1e-30 }
    }
}

/// Marginal tolerance a returned plan is expected to meet at convergence.
pub const MARGINAL_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SinkhornStats {
    pub iterations: usize,
    pub log_domain: bool,
    pub converged: bool,
    /// L1 distance between plan row sums and `p1`
    pub row_residual: f64,
    /// L1 distance between plan column sums and `p2`
    pub col_residual: f64,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        let c = self.values.cols();
        self.values.data().chunks(c).map(|r| r.iter().map(|&x| x as f64).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let c = self.values.cols();
        let mut out = vec![0.0; c];
        for r in self.values.data().chunks(c) {
            for (o, &x) in out.iter_mut().zip(r) {
                *o += x as f64;
            }
        }
        out
    }

    /// `⟨C, P⟩`
    pub fn cost(&self, c: &CostMatrix) -> f64 {
        self.values.data().iter().zip(c.values.data()).map(|(&p, &c)| p as f64 * c as f64).sum()
    }

    /// Zero-embeds the plan into the top-left of an `l×l` matrix.
    pub fn embedded(&self, l: usize) -> Result<Tensor<f32>> {
        let (r, c) = (self.values.rows(), self.values.cols());
        if r > l || c > l {
            return Err(Error::invalid(format!("{r}x{c} plan does not fit in {l}x{l}")));
        }
        let mut out = vec![0.0; l * l];
        for i in 0..r {
            out[i * l..i * l + c].copy_from_slice(self.values.row_vec(i));
        }
        Ok(Tensor::new(vec![l, l], out)?)
    }
}

pub fn cost_from_similarity(s: &SimilarityMatrix) -> Result<CostMatrix> {
    let block = s.valid_block();
    let smax = block.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let data = block.data().iter().map(|&x| smax - x).collect();
    Ok(CostMatrix { values: Tensor::new(block.shape().to_vec(), data)? })
}

/// Cost from an `n×m` similarity block on a tape.
pub fn cost_on_tape<T: Scalar>(tape: &mut Tape<T>, s: Var) -> Result<Var> {
    let smax = tape.max(s)?;
    let diff = tape.sub(s, smax)?;
    Ok(tape.neg(diff)?)
}

pub fn uniform_marginals(len_m: usize, len_m2: usize) -> Result<Marginals> {
    if len_m == 0 || len_m2 == 0 {
        return Err(Error::invalid(format!("marginals over empty support ({len_m}, {len_m2})")));
    }
    Ok(Marginals { p1: vec![1.0 / len_m as f64; len_m], p2: vec![1.0 / len_m2 as f64; len_m2] })
}

fn check_inputs(n: usize, m: usize, marg: &Marginals, cfg: &SinkhornConfig) -> Result<()> {
    if !(cfg.lambda > 0.0) || cfg.max_iters == 0 {
        return Err(Error::invalid(format!("sinkhorn needs λ > 0 and T ≥ 1 (λ={}, T={})", cfg.lambda, cfg.max_iters)));
    }
    if marg.p1.len() != n || marg.p2.len() != m {
        return Err(Error::invalid(format!(
            "marginals of length ({}, {}) for a {n}x{m} cost",
            marg.p1.len(),
            marg.p2.len()
        )));
    }
    if marg.p1.iter().chain(&marg.p2).any(|&p| !(p > 0.0)) {
        return Err(Error::invalid("marginals must be positive"));
    }
    Ok(())
}

fn residuals(plan: &[f64], n: usize, m: usize, marg: &Marginals) -> (f64, f64) {
    let mut row = 0.0;
    let mut cols = vec![0.0; m];
    for i in 0..n {
        let r = &plan[i * m..(i + 1) * m];
        row += (r.iter().sum::<f64>() - marg.p1[i]).abs();
        for (c, &x) in cols.iter_mut().zip(r) {
            *c += x;
        }
    }
    let col = cols.iter().zip(&marg.p2).map(|(c, p)| (c - p).abs()).sum();
    (row, col)
}

fn kernel_underflows<T: Scalar>(k: &[T]) -> bool {
    k.iter().any(|&x| !x.is_finite() || x < T::min_positive_value())
}

/// Computes the regularized plan `diag(u)·exp(−λC)·diag(v)`.
pub fn sinkhorn(c: &CostMatrix, marg: &Marginals, cfg: &SinkhornConfig) -> Result<(TransportPlan, SinkhornStats)> {
    let (plan, stats) = sinkhorn_values::<f32>(c.values.data(), c.values.rows(), c.values.cols(), marg, cfg)?;
    let values = Tensor::new(c.values.shape().to_vec(), plan)?;
    Ok((TransportPlan { values }, stats))
}

/// Plain-buffer Sinkhorn over a row-major `n×m` cost.
pub fn sinkhorn_values<T: Scalar>(
    cost: &[T],
    n: usize,
    m: usize,
    marg: &Marginals,
    cfg: &SinkhornConfig,
) -> Result<(Vec<T>, SinkhornStats)> {
    check_inputs(n, m, marg, cfg)?;
    let lam = T::of(cfg.lambda);
    let k: Vec<T> = cost.iter().map(|&c| (-lam * c).exp()).collect();
    if !kernel_underflows(&k) {
        if let Some(found) = scaling_values(&k, n, m, marg, cfg) {
            return Ok(found);
        }
    }
    log_domain_values(cost, n, m, marg, cfg)
}

fn scaling_values<T: Scalar>(
    k: &[T],
    n: usize,
    m: usize,
    marg: &Marginals,
    cfg: &SinkhornConfig,
) -> Option<(Vec<T>, SinkhornStats)> {
    let floor = T::of(cfg.floor);
    let p1: Vec<T> = marg.p1.iter().map(|&p| T::of(p)).collect();
    let p2: Vec<T> = marg.p2.iter().map(|&p| T::of(p)).collect();
    let mut u = vec![T::one(); n];
    let mut v = vec![T::one(); m];
    let mut stats = SinkhornStats::default();
    let plan_of = |u: &[T], v: &[T]| -> Vec<T> {
        (0..n * m).map(|idx| u[idx / m] * k[idx] * v[idx % m]).collect()
    };
    for it in 1..=cfg.max_iters {
        for i in 0..n {
            let kv = k[i * m..(i + 1) * m].iter().zip(&v).fold(T::zero(), |s, (&a, &b)| s + a * b);
            if kv < floor {
                return None;
            }
            u[i] = p1[i] / kv;
        }
        for j in 0..m {
            let ktu = (0..n).fold(T::zero(), |s, i| s + k[i * m + j] * u[i]);
            if ktu < floor {
                return None;
            }
            v[j] = p2[j] / ktu;
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return None;
        }
        let plan = plan_of(&u, &v);
        let as64: Vec<f64> = plan.iter().map(|x| x.as_f64()).collect();
        let (r, c) = residuals(&as64, n, m, marg);
        stats = SinkhornStats { iterations: it, log_domain: false, converged: r < cfg.tol && c < cfg.tol, row_residual: r, col_residual: c };
        if stats.converged {
            return Some((plan, stats));
        }
    }
    let plan = plan_of(&u, &v);
    plan.iter().all(|x| x.is_finite()).then_some((plan, stats))
}

fn lse<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let mx = xs.clone().fold(T::neg_infinity(), T::max);
    if mx == T::neg_infinity() {
        return mx;
    }
    mx + xs.map(|x| (x - mx).exp()).sum::<T>().ln()
}

fn log_domain_values<T: Scalar>(
    cost: &[T],
    n: usize,
    m: usize,
    marg: &Marginals,
    cfg: &SinkhornConfig,
) -> Result<(Vec<T>, SinkhornStats)> {
    let lam = T::of(cfg.lambda);
    let mk: Vec<T> = cost.iter().map(|&c| -lam * c).collect();
    let lp1: Vec<T> = marg.p1.iter().map(|&p| T::of(p.ln())).collect();
    let lp2: Vec<T> = marg.p2.iter().map(|&p| T::of(p.ln())).collect();
    let mut f = vec![T::zero(); n];
    let mut g = vec![T::zero(); m];
    let mut stats = SinkhornStats { log_domain: true, ..Default::default() };
    let plan_of = |f: &[T], g: &[T]| -> Vec<T> { (0..n * m).map(|idx| (f[idx / m] + mk[idx] + g[idx % m]).exp()).collect() };
    let mut plan = Vec::new();
    for it in 1..=cfg.max_iters {
        for i in 0..n {
            f[i] = lp1[i] - lse((0..m).map(|j| mk[i * m + j] + g[j]));
        }
        for j in 0..m {
            g[j] = lp2[j] - lse((0..n).map(|i| mk[i * m + j] + f[i]));
        }
        if f.iter().chain(&g).any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("sinkhorn (log domain) produced a non-finite potential at iteration {it}")));
        }
        plan = plan_of(&f, &g);
        let as64: Vec<f64> = plan.iter().map(|x| x.as_f64()).collect();
        let (r, c) = residuals(&as64, n, m, marg);
        stats = SinkhornStats { iterations: it, log_domain: true, converged: r < cfg.tol && c < cfg.tol, row_residual: r, col_residual: c };
        if stats.converged {
            break;
        }
    }
    Ok((plan, stats))
}

/// Differentiable Sinkhorn on an `n×m` cost node.
///
/// Every iteration is recorded, so the gradient of anything computed from the
/// returned plan flows back through all unrolled updates to `cost`.
pub fn sinkhorn_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    cost: Var,
    marg: &Marginals,
    cfg: &SinkhornConfig,
) -> Result<(Var, SinkhornStats)> {
    let (n, m) = match tape.shape(cost) {
        [n, m] => (*n, *m),
        s => return Err(Error::invalid(format!("cost must be a matrix, got {s:?}"))),
    };
    check_inputs(n, m, marg, cfg)?;
    let mk = tape.mul_scalar(cost, -cfg.lambda)?;
    let k = tape.exp(mk);
    match k {
        Ok(k) if !kernel_underflows(tape.value(k)) => match scaling_on_tape(tape, k, n, m, marg, cfg) {
            Ok(Some(found)) => return Ok(found),
            Ok(None) | Err(Error::Diff(DiffError::NonFinite { .. })) => {}
            Err(e) => return Err(e),
        },
        Ok(_) | Err(DiffError::NonFinite { .. }) => {}
        Err(e) => return Err(e.into()),
    }
    log_domain_on_tape(tape, mk, n, m, marg, cfg)
}

fn plan_residuals<T: Scalar>(tape: &Tape<T>, plan: Var, n: usize, m: usize, marg: &Marginals) -> (f64, f64) {
    let as64: Vec<f64> = tape.value(plan).iter().map(|x| x.as_f64()).collect();
    residuals(&as64, n, m, marg)
}

fn scaling_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    k: Var,
    n: usize,
    m: usize,
    marg: &Marginals,
    cfg: &SinkhornConfig,
) -> Result<Option<(Var, SinkhornStats)>> {
    let floor = T::of(cfg.floor);
    let p1 = tape.constant(Tensor::new(vec![n, 1], marg.p1.iter().map(|&p| T::of(p)).collect())?);
    let p2 = tape.constant(Tensor::new(vec![m, 1], marg.p2.iter().map(|&p| T::of(p)).collect())?);
    let kt = tape.transpose(k)?;
    let mut v = tape.constant(Tensor::new(vec![m, 1], vec![T::one(); m])?);
    let mut stats = SinkhornStats::default();
    let mut plan = None;
    for it in 1..=cfg.max_iters {
        let kv = tape.matmul(k, v)?;
        if tape.value(kv).iter().any(|&x| x < floor) {
            return Ok(None);
        }
        let kv = tape.clamp_min(kv, cfg.floor)?;
        let u = tape.div(p1, kv)?;
        let ktu = tape.matmul(kt, u)?;
        if tape.value(ktu).iter().any(|&x| x < floor) {
            return Ok(None);
        }
        let ktu = tape.clamp_min(ktu, cfg.floor)?;
        v = tape.div(p2, ktu)?;
        if tape.value(u).iter().chain(tape.value(v)).any(|x| !x.is_finite()) {
            return Ok(None);
        }
        let uv = tape.matmul_t(u, v)?;
        let p = tape.mul(k, uv)?;
        let (r, c) = plan_residuals(tape, p, n, m, marg);
        stats = SinkhornStats { iterations: it, log_domain: false, converged: r < cfg.tol && c < cfg.tol, row_residual: r, col_residual: c };
        plan = Some(p);
        if stats.converged {
            break;
        }
    }
    let plan = plan.expect("at least one iteration");
    if tape.value(plan).iter().any(|x| !x.is_finite()) {
        return Ok(None);
    }
    Ok(Some((plan, stats)))
}

fn log_domain_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    mk: Var,
    n: usize,
    m: usize,
    marg: &Marginals,
    cfg: &SinkhornConfig,
) -> Result<(Var, SinkhornStats)> {
    let lp1 = tape.constant(Tensor::new(vec![n, 1], marg.p1.iter().map(|&p| T::of(p.ln())).collect())?);
    let lp2 = tape.constant(Tensor::new(vec![m, 1], marg.p2.iter().map(|&p| T::of(p.ln())).collect())?);
    let mut g = tape.constant(Tensor::new(vec![m, 1], vec![T::zero(); m])?);
    let mut stats = SinkhornStats { log_domain: true, ..Default::default() };
    let mut plan = None;
    let diverged = |it: usize| Error::Numerical(format!("sinkhorn (log domain) produced a non-finite potential at iteration {it}"));
    for it in 1..=cfg.max_iters {
        let step = |tape: &mut Tape<T>, g: Var| -> Result<(Var, Var, Var), DiffError> {
            let a = tape.add_row(mk, g)?;
            let la = tape.logsumexp_rows(a)?;
            let f = tape.sub(lp1, la)?;
            let b = tape.add_col(mk, f)?;
            let bt = tape.transpose(b)?;
            let lb = tape.logsumexp_rows(bt)?;
            let g = tape.sub(lp2, lb)?;
            let logp = tape.add_row(b, g)?;
            let p = tape.exp(logp)?;
            Ok((f, g, p))
        };
        let (f, g_next, p) = match step(tape, g) {
            Ok(x) => x,
            Err(DiffError::NonFinite { .. }) => return Err(diverged(it)),
            Err(e) => return Err(e.into()),
        };
        g = g_next;
        if tape.value(f).iter().chain(tape.value(g)).any(|x| !x.is_finite()) {
            return Err(diverged(it));
        }
        let (r, c) = plan_residuals(tape, p, n, m, marg);
        stats = SinkhornStats { iterations: it, log_domain: true, converged: r < cfg.tol && c < cfg.tol, row_residual: r, col_residual: c };
        plan = Some(p);
        if stats.converged {
            break;
        }
    }
    Ok((plan.expect("at least one iteration"), stats))
}

/// `S' = S ∘ P` on the valid block; padding stays zero.
pub fn reweight(s: &SimilarityMatrix, p: &TransportPlan) -> Result<SimilarityMatrix> {
    let (r, c) = s.valid;
    if p.values.shape() != [r, c] {
        return Err(Error::invalid(format!("plan {:?} does not match valid block {r}x{c}", p.values.shape())));
    }
    let l = s.values.cols();
    let mut out = vec![0.0; s.values.len()];
    for i in 0..r {
        for j in 0..c {
            out[i * l + j] = s.values.data()[i * l + j] * p.values.at(i, j);
        }
    }
    Ok(SimilarityMatrix { values: Tensor::new(s.values.shape().to_vec(), out)?, valid: s.valid })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(rows: &[Vec<f32>], l: usize) -> SimilarityMatrix {
        let (r, c) = (rows.len(), rows[0].len());
        let mut data = vec![0.0; l * l];
        for i in 0..r {
            data[i * l..i * l + c].copy_from_slice(&rows[i]);
        }
        SimilarityMatrix { values: Tensor::new(vec![l, l], data).unwrap(), valid: (r, c) }
    }

    fn cost(rows: &[Vec<f32>]) -> CostMatrix {
        CostMatrix { values: Tensor::from_rows(rows).unwrap() }
    }

    #[test]
    fn cost_hand_values() {
        let c = cost_from_similarity(&sim(&[vec![2.0, 0.0], vec![1.0, 2.0]], 4)).unwrap();
        assert_eq!(c.values.data(), &[0.0, 2.0, 1.0, 0.0]);
        let c = cost_from_similarity(&sim(&[vec![3.5; 3], vec![3.5; 3]], 4)).unwrap();
        assert!(c.values.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cost_ignores_padding() {
        // all-negative valid block: the zero padding must not become S_max
        let c = cost_from_similarity(&sim(&[vec![-1.0, -3.0]], 4)).unwrap();
        assert_eq!(c.values.data(), &[0.0, 2.0]);
    }

    #[test]
    fn uniform_marginal_examples() {
        let m = uniform_marginals(2, 4).unwrap();
        assert_eq!(m.p1, vec![0.5, 0.5]);
        assert_eq!(m.p2, vec![0.25; 4]);
        assert_eq!(uniform_marginals(1, 1).unwrap().p1, vec![1.0]);
        let m = uniform_marginals(3, 3).unwrap();
        assert!(m.p1.iter().chain(&m.p2).all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        assert!(uniform_marginals(0, 2).is_err());
    }

    #[test]
    fn zero_cost_gives_product_measure() {
        for lambda in [0.1, 1.0, 50.0] {
            let cfg = SinkhornConfig { lambda, ..Default::default() };
            let (p, _) = sinkhorn(&cost(&[vec![0.0, 0.0], vec![0.0, 0.0]]), &uniform_marginals(2, 2).unwrap(), &cfg).unwrap();
            assert!(p.values.data().iter().all(|&x| (x - 0.25).abs() < 1e-7));
        }
    }

    #[test]
    fn large_lambda_approaches_assignment() {
        let cfg = SinkhornConfig { lambda: 50.0, ..Default::default() };
        let (p, _) = sinkhorn(&cost(&[vec![0.0, 1.0], vec![1.0, 0.0]]), &uniform_marginals(2, 2).unwrap(), &cfg).unwrap();
        let want = [0.5, 0.0, 0.0, 0.5];
        for (x, w) in p.values.data().iter().zip(want) {
            assert!((x - w).abs() < 1e-4);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let c = cost(&[vec![0.0]]);
        let marg = uniform_marginals(1, 1).unwrap();
        assert!(sinkhorn(&c, &marg, &SinkhornConfig { lambda: 0.0, ..Default::default() }).is_err());
        assert!(sinkhorn(&c, &marg, &SinkhornConfig { max_iters: 0, ..Default::default() }).is_err());
        assert!(sinkhorn(&c, &uniform_marginals(2, 1).unwrap(), &SinkhornConfig::default()).is_err());
    }

    #[test]
    fn underflowing_kernel_switches_to_log_domain() {
        let c = cost(&[vec![0.0, 40.0], vec![40.0, 0.0], vec![20.0, 20.0]]);
        let marg = uniform_marginals(3, 2).unwrap();
        let cfg = SinkhornConfig { lambda: 10.0, max_iters: 500, ..Default::default() };
        let (p, stats) = sinkhorn(&c, &marg, &cfg).unwrap();
        assert!(stats.log_domain);
        assert!(p.values.is_finite());
        for (s, want) in p.row_sums().iter().zip(&marg.p1) {
            assert!((s - want).abs() < 1e-5);
        }
    }

    #[test]
    fn reweight_examples() {
        let s = sim(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]], 4);
        let uniform = TransportPlan { values: Tensor::new(vec![2, 3], vec![1.0 / 6.0; 6]).unwrap() };
        let out = reweight(&s, &uniform).unwrap();
        let block = out.valid_block();
        for (o, x) in block.data().iter().zip(s.valid_block().data()) {
            assert_eq!(*o, x * (1.0 / 6.0f32));
        }
        assert_eq!(out.values.data().iter().filter(|&&x| x != 0.0).count(), 6);

        let zero_row = TransportPlan { values: Tensor::new(vec![2, 3], vec![0.0, 0.0, 0.0, 0.2, 0.3, 0.5]).unwrap() };
        let out = reweight(&s, &zero_row).unwrap();
        assert_eq!(&out.valid_block().data()[..3], &[0.0, 0.0, 0.0]);

        let wrong = TransportPlan { values: Tensor::zeros(vec![3, 3]) };
        assert!(reweight(&s, &wrong).is_err());
    }

    #[test]
    fn embedded_plan_is_zero_padded() {
        let p = TransportPlan { values: Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap() };
        let e = p.embedded(3).unwrap();
        assert_eq!(e.data(), &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(p.embedded(1).is_err());
    }
}
