//! Clustering objective over factor matrices W (centroids) and H (assignments),
//! its partial gradients, and the step-size rules used by the solvers.
//!
//! The global cost is a weighted sum of per-client costs
//! `F(W, H) = Σ_p ω_p F_p(W, H_p)` with
//! `F_p = ‖X_p − W H_p‖_F²/N_p + R_H(H_p)/ω_p + R_W(W)`,
//! where `R_H` penalizes non-orthogonal assignment columns and `R_W ≡ 0`.

use crate::error::{Error, Result};
use crate::linalg::{
    lambda_max_psd, project_box_in_place, project_nonneg_in_place,
    project_simplex_columns_in_place, Matrix, LAMBDA_MAX_ITER, LAMBDA_TOL,
};

/// Feasible set for the assignment matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HConstraint {
    /// `[H]_ij >= 0`.
    Nonneg,
    /// Every column on the probability simplex.
    Simplex,
}

impl HConstraint {
    pub fn project_in_place(self, h: &mut Matrix) {
        match self {
            HConstraint::Nonneg => project_nonneg_in_place(h),
            HConstraint::Simplex => project_simplex_columns_in_place(h),
        }
    }
}

/// Step-size rule for the H updates (step is `1/c`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HStepRule {
    /// `c = ½ λ_max(WᵀW)`.
    HalfSpectral,
    /// `c = (γ/2) L_H` with the analytic Lipschitz bound
    /// `L_H = (2/N_p) λ_max(WᵀW) + (ρ(K−1) + ν)/ω_p`; requires `γ > 1`.
    ScaledLipschitz,
}

/// Step-size rule for the W updates (step is `1/d`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WStepRule {
    /// `d = λ_max(H Hᵀ)`.
    Spectral,
    /// `d = ½ λ_max(H Hᵀ)`.
    HalfSpectral,
    /// `d = (s+1) L_W` with `L_W = (2/N) λ_max(H Hᵀ)`; the step shrinks
    /// with the round index `s`.
    DiminishingLipschitz,
    /// `d = γ L_W`; requires `γ > 1`.
    ScaledLipschitz,
}

/// One client's data block.
#[derive(Debug, Clone)]
pub struct DataShard {
    x: Matrix,
    omega: f64,
    labels: Option<Vec<usize>>,
}

impl DataShard {
    /// `omega` is this shard's weight `N_p / N` in the global objective.
    pub fn new(x: Matrix, omega: f64, labels: Option<Vec<usize>>) -> Result<Self> {
        if !(omega > 0.0 && omega <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "shard weight must lie in (0, 1], got {omega}"
            )));
        }
        if let Some(ls) = &labels {
            if ls.len() != x.cols() {
                return Err(Error::DimMismatch(format!(
                    "{} labels for {} samples",
                    ls.len(),
                    x.cols()
                )));
            }
        }
        Ok(Self { x, omega, labels })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn n_samples(&self) -> usize {
        self.x.cols()
    }

    pub fn features(&self) -> usize {
        self.x.rows()
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }
}

/// The clustering problem instance: shards plus model parameters.
#[derive(Debug, Clone)]
pub struct Problem {
    shards: Vec<DataShard>,
    features: usize,
    total_samples: usize,
    k: usize,
    rho: f64,
    nu: f64,
    w_lo: f64,
    w_hi: f64,
    h_constraint: HConstraint,
}

impl Problem {
    /// Assembles a problem; the centroid box `[w_lo, w_hi]` defaults to the
    /// data range `[min X, max X]`.
    pub fn new(
        shards: Vec<DataShard>,
        k: usize,
        rho: f64,
        nu: f64,
        h_constraint: HConstraint,
    ) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::InvalidArgument("problem needs at least one shard".into()));
        }
        if rho < 0.0 || nu < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "penalties must be nonnegative, got rho {rho}, nu {nu}"
            )));
        }
        let features = shards[0].features();
        let mut total = 0usize;
        let mut w_lo = f64::INFINITY;
        let mut w_hi = f64::NEG_INFINITY;
        for (p, s) in shards.iter().enumerate() {
            if s.features() != features {
                return Err(Error::DimMismatch(format!(
                    "shard {p} has {} features, expected {features}",
                    s.features()
                )));
            }
            total += s.n_samples();
            w_lo = w_lo.min(s.x().min_entry());
            w_hi = w_hi.max(s.x().max_entry());
        }
        if k == 0 || k > total {
            return Err(Error::InvalidArgument(format!(
                "cluster count {k} out of range for {total} samples"
            )));
        }
        let omega_sum: f64 = shards.iter().map(|s| s.omega()).sum();
        if (omega_sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "shard weights must sum to 1, got {omega_sum}"
            )));
        }
        for s in &shards {
            let expect = s.n_samples() as f64 / total as f64;
            if (s.omega() - expect).abs() > 1e-12 {
                return Err(Error::InvalidArgument(
                    "shard weight must equal its sample share".into(),
                ));
            }
        }
        Ok(Self {
            shards,
            features,
            total_samples: total,
            k,
            rho,
            nu,
            w_lo,
            w_hi,
            h_constraint,
        })
    }

    /// Builds shards (weights derived from sample counts) and assembles the problem.
    pub fn from_matrices(
        blocks: Vec<(Matrix, Option<Vec<usize>>)>,
        k: usize,
        rho: f64,
        nu: f64,
        h_constraint: HConstraint,
    ) -> Result<Self> {
        let total: usize = blocks.iter().map(|(x, _)| x.cols()).sum();
        let shards = blocks
            .into_iter()
            .map(|(x, labels)| {
                let omega = x.cols() as f64 / total as f64;
                DataShard::new(x, omega, labels)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(shards, k, rho, nu, h_constraint)
    }

    /// Overrides the centroid box; useful when the data range is too tight.
    pub fn with_w_box(mut self, lo: f64, hi: f64) -> Result<Self> {
        if lo > hi {
            return Err(Error::EmptyBox { lo, hi });
        }
        self.w_lo = lo;
        self.w_hi = hi;
        Ok(self)
    }

    pub fn shards(&self) -> &[DataShard] {
        &self.shards
    }

    pub fn shard(&self, p: usize) -> &DataShard {
        &self.shards[p]
    }

    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn total_samples(&self) -> usize {
        self.total_samples
    }

    pub fn clusters(&self) -> usize {
        self.k
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn w_box(&self) -> (f64, f64) {
        (self.w_lo, self.w_hi)
    }

    pub fn h_constraint(&self) -> HConstraint {
        self.h_constraint
    }

    /// True when every shard carries ground-truth labels.
    pub fn fully_labeled(&self) -> bool {
        self.shards.iter().all(|s| s.labels().is_some())
    }

    /// Ground-truth labels concatenated in shard order, if available.
    pub fn concatenated_labels(&self) -> Option<Vec<usize>> {
        if !self.fully_labeled() {
            return None;
        }
        let mut out = Vec::with_capacity(self.total_samples);
        for s in &self.shards {
            out.extend_from_slice(s.labels().unwrap());
        }
        Some(out)
    }
}

/// Global centroid matrix plus per-client assignment matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    pub w: Matrix,
    pub h: Vec<Matrix>,
}

impl FactorState {
    pub fn validate(&self, problem: &Problem) -> Result<()> {
        if self.w.rows() != problem.features() || self.w.cols() != problem.clusters() {
            return Err(Error::DimMismatch(format!(
                "W is {}x{}, expected {}x{}",
                self.w.rows(),
                self.w.cols(),
                problem.features(),
                problem.clusters()
            )));
        }
        if self.h.len() != problem.num_clients() {
            return Err(Error::DimMismatch(format!(
                "{} assignment blocks for {} clients",
                self.h.len(),
                problem.num_clients()
            )));
        }
        for (p, h) in self.h.iter().enumerate() {
            if h.rows() != problem.clusters() || h.cols() != problem.shard(p).n_samples() {
                return Err(Error::DimMismatch(format!(
                    "H_{p} is {}x{}, expected {}x{}",
                    h.rows(),
                    h.cols(),
                    problem.clusters(),
                    problem.shard(p).n_samples()
                )));
            }
        }
        Ok(())
    }
}

/// Assignment regularizer
/// `(ρ/2) Σ_j [(1ᵀh_j)² − ‖h_j‖²] + (ν/2) ‖H‖_F²`.
///
/// The first term vanishes exactly on one-hot columns, so growing ρ drives
/// relaxed assignments toward hard ones.
pub fn reg_h(h: &Matrix, rho: f64, nu: f64) -> Result<f64> {
    if rho < 0.0 || nu < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "penalties must be nonnegative, got rho {rho}, nu {nu}"
        )));
    }
    let mut cross = 0.0;
    let mut sq = 0.0;
    for j in 0..h.cols() {
        let col = h.col(j);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for &v in col {
            sum += v;
            sumsq += v * v;
        }
        cross += sum * sum - sumsq;
        sq += sumsq;
    }
    Ok(0.5 * rho * cross + 0.5 * nu * sq)
}

fn check_shapes(w: &Matrix, h: &Matrix, shard: &DataShard) -> Result<()> {
    if w.rows() != shard.features() {
        return Err(Error::DimMismatch(format!(
            "W has {} rows, data has {} features",
            w.rows(),
            shard.features()
        )));
    }
    if h.rows() != w.cols() || h.cols() != shard.n_samples() {
        return Err(Error::DimMismatch(format!(
            "H is {}x{}, expected {}x{}",
            h.rows(),
            h.cols(),
            w.cols(),
            shard.n_samples()
        )));
    }
    Ok(())
}

/// One client's cost `‖X_p − W H_p‖_F²/N_p + R_H(H_p)/ω_p` (the `R_W` term
/// is identically zero).
pub fn objective_local(w: &Matrix, h: &Matrix, shard: &DataShard, rho: f64, nu: f64) -> Result<f64> {
    check_shapes(w, h, shard)?;
    let wh = w.mul(h);
    let fit = crate::linalg::frob_dist_sq(shard.x(), &wh);
    Ok(fit / shard.n_samples() as f64 + reg_h(h, rho, nu)? / shard.omega())
}

/// Weighted sum of the per-client costs without assembling a `FactorState`.
pub fn objective_global_parts(
    w: &Matrix,
    h_list: &[Matrix],
    problem: &Problem,
    rho: f64,
    nu: f64,
) -> Result<f64> {
    if h_list.len() != problem.num_clients() {
        return Err(Error::DimMismatch(format!(
            "{} assignment blocks for {} clients",
            h_list.len(),
            problem.num_clients()
        )));
    }
    let mut total = 0.0;
    for (p, shard) in problem.shards().iter().enumerate() {
        total += shard.omega() * objective_local(w, &h_list[p], shard, rho, nu)?;
    }
    Ok(total)
}

/// Weighted sum of the per-client costs at the given penalties.
pub fn objective_global_with(
    state: &FactorState,
    problem: &Problem,
    rho: f64,
    nu: f64,
) -> Result<f64> {
    state.validate(problem)?;
    objective_global_parts(&state.w, &state.h, problem, rho, nu)
}

/// Weighted sum of the per-client costs at the problem's penalties.
pub fn objective_global(state: &FactorState, problem: &Problem) -> Result<f64> {
    objective_global_with(state, problem, problem.rho(), problem.nu())
}

/// Round-level cache for H gradients: W is held fixed while H is updated,
/// so `WᵀW` and `WᵀX_p` are computed once.
pub struct HGradCache {
    wtw: Matrix,
    wtx: Matrix,
    two_over_np: f64,
    inv_omega: f64,
    rho: f64,
    nu: f64,
}

impl HGradCache {
    pub fn new(w: &Matrix, shard: &DataShard, rho: f64, nu: f64) -> Self {
        HGradCache {
            wtw: w.gram(),
            wtx: w.transpose_mul(shard.x()),
            two_over_np: 2.0 / shard.n_samples() as f64,
            inv_omega: 1.0 / shard.omega(),
            rho,
            nu,
        }
    }

    /// `(2/N_p)(WᵀW H − WᵀX_p) + [ρ(𝟙𝟙ᵀ − I)H + νH]/ω_p`
    pub fn grad(&self, h: &Matrix) -> Matrix {
        let mut g = self.wtw.mul(h);
        for (gv, xv) in g.data_mut().iter_mut().zip(self.wtx.data().iter()) {
            *gv = self.two_over_np * (*gv - *xv);
        }
        if self.rho != 0.0 || self.nu != 0.0 {
            for j in 0..h.cols() {
                let col = h.col(j);
                let sum: f64 = col.iter().sum();
                let g_col = g.col_mut(j);
                for (gv, &hv) in g_col.iter_mut().zip(col.iter()) {
                    *gv += self.inv_omega * (self.rho * (sum - hv) + self.nu * hv);
                }
            }
        }
        g
    }
}

/// Gradient of the local cost with respect to `H_p`.
pub fn grad_h_local(
    w: &Matrix,
    h: &Matrix,
    shard: &DataShard,
    rho: f64,
    nu: f64,
) -> Result<Matrix> {
    check_shapes(w, h, shard)?;
    if rho < 0.0 || nu < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "penalties must be nonnegative, got rho {rho}, nu {nu}"
        )));
    }
    Ok(HGradCache::new(w, shard, rho, nu).grad(h))
}

/// Round-level cache for W gradients: H is held fixed while W is updated,
/// so `H Hᵀ` and `X Hᵀ` are computed once.
pub struct WGradCache {
    hht: Matrix,
    xht: Matrix,
    scale: f64,
}

impl WGradCache {
    /// Per-shard cache; `scale = 2/N_p` yields the local gradient `∇_W F_p`.
    pub fn new(h: &Matrix, shard: &DataShard) -> Self {
        WGradCache {
            hht: h.outer_gram(),
            xht: shard.x().mul_transpose(h),
            scale: 2.0 / shard.n_samples() as f64,
        }
    }

    /// `scale · (W · HHᵀ − XHᵀ)`
    pub fn grad(&self, w: &Matrix) -> Matrix {
        let mut g = w.mul(&self.hht);
        for (gv, xv) in g.data_mut().iter_mut().zip(self.xht.data().iter()) {
            *gv = self.scale * (*gv - *xv);
        }
        add_w_regularizer_grad(&mut g, w);
        g
    }
}

/// Additive slot for `∇R_W`; the centroid regularizer is identically zero
/// in this model, so the slot is a no-op.
fn add_w_regularizer_grad(_g: &mut Matrix, _w: &Matrix) {}

/// Per-client gradient `∇_W F_p = (2/N_p)(W H_p H_pᵀ − X_p H_pᵀ)`.
pub fn grad_w_shard(w: &Matrix, h: &Matrix, shard: &DataShard) -> Result<Matrix> {
    check_shapes(w, h, shard)?;
    Ok(WGradCache::new(h, shard).grad(w))
}

/// Global gradient `∇_W F = 2W Σ_p H_p H_pᵀ/N − 2 Σ_p X_p H_pᵀ/N`.
///
/// Built from the same additive `(2/N)`-scaled statistics a server would
/// accumulate, summed over shards in index order.
pub fn grad_w(w: &Matrix, h_list: &[Matrix], shards: &[DataShard]) -> Result<Matrix> {
    if h_list.len() != shards.len() {
        return Err(Error::DimMismatch(format!(
            "{} assignment blocks for {} shards",
            h_list.len(),
            shards.len()
        )));
    }
    let total: usize = shards.iter().map(|s| s.n_samples()).sum();
    let two_over_n = 2.0 / total as f64;
    let k = w.cols();
    let mut sum_hht = Matrix::zeros(k, k);
    let mut sum_xht = Matrix::zeros(w.rows(), k);
    for (h, shard) in h_list.iter().zip(shards.iter()) {
        check_shapes(w, h, shard)?;
        sum_hht.add_scaled(two_over_n, &h.outer_gram());
        sum_xht.add_scaled(two_over_n, &shard.x().mul_transpose(h));
    }
    let mut g = w.mul(&sum_hht);
    for (gv, xv) in g.data_mut().iter_mut().zip(sum_xht.data().iter()) {
        *gv -= *xv;
    }
    add_w_regularizer_grad(&mut g, w);
    Ok(g)
}

fn check_step(v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::DegenerateStep { got: v })
    }
}

/// Analytic Lipschitz bound for `∇_H F_p` at fixed W, from `λ_max(WᵀW)`.
pub fn lipschitz_h(lambda_wtw: f64, n_p: usize, omega: f64, rho: f64, nu: f64, k: usize) -> f64 {
    (2.0 / n_p as f64) * lambda_wtw + (rho * (k as f64 - 1.0) + nu) / omega
}

/// Analytic Lipschitz bound for `∇_W F` at fixed H, from `λ_max(Σ H_p H_pᵀ)`.
pub fn lipschitz_w(lambda_hht: f64, n: usize) -> f64 {
    (2.0 / n as f64) * lambda_hht
}

/// H step-size coefficient from a precomputed `λ_max(WᵀW)`.
pub fn step_h_from_lambda(
    lambda_wtw: f64,
    shard_n: usize,
    shard_omega: f64,
    k: usize,
    rule: HStepRule,
    gamma: f64,
    rho: f64,
    nu: f64,
) -> Result<f64> {
    match rule {
        HStepRule::HalfSpectral => check_step(0.5 * lambda_wtw),
        HStepRule::ScaledLipschitz => {
            if gamma <= 1.0 {
                return Err(Error::GammaTooSmall(gamma));
            }
            check_step(0.5 * gamma * lipschitz_h(lambda_wtw, shard_n, shard_omega, rho, nu, k))
        }
    }
}

/// H step-size coefficient `c_p` for one client at the current W.
pub fn step_h(
    w: &Matrix,
    shard: &DataShard,
    rule: HStepRule,
    gamma: f64,
    rho: f64,
    nu: f64,
) -> Result<f64> {
    let lambda = lambda_max_psd(&w.gram(), LAMBDA_TOL, LAMBDA_MAX_ITER)?;
    step_h_from_lambda(
        lambda,
        shard.n_samples(),
        shard.omega(),
        w.cols(),
        rule,
        gamma,
        rho,
        nu,
    )
}

/// W step-size coefficient from a precomputed `λ_max(Σ H_p H_pᵀ)`.
pub fn step_w_from_lambda(
    lambda_hht: f64,
    round_s: u32,
    rule: WStepRule,
    gamma: f64,
    n: usize,
) -> Result<f64> {
    if round_s == 0 {
        return Err(Error::InvalidArgument("round index starts at 1".into()));
    }
    match rule {
        WStepRule::Spectral => check_step(lambda_hht),
        WStepRule::HalfSpectral => check_step(0.5 * lambda_hht),
        WStepRule::DiminishingLipschitz => {
            check_step((round_s as f64 + 1.0) * lipschitz_w(lambda_hht, n))
        }
        WStepRule::ScaledLipschitz => {
            if gamma <= 1.0 {
                return Err(Error::GammaTooSmall(gamma));
            }
            check_step(gamma * lipschitz_w(lambda_hht, n))
        }
    }
}

/// W step-size coefficient from a precomputed row-Gram `Σ H_p H_pᵀ`.
pub fn step_w_from_gram(
    gram: &Matrix,
    round_s: u32,
    rule: WStepRule,
    gamma: f64,
    n: usize,
) -> Result<f64> {
    let lambda = lambda_max_psd(gram, LAMBDA_TOL, LAMBDA_MAX_ITER)?;
    step_w_from_lambda(lambda, round_s, rule, gamma, n)
}

/// W step-size coefficient `d` at round `s` from the current assignments.
pub fn step_w(
    h_list: &[Matrix],
    round_s: u32,
    rule: WStepRule,
    gamma: f64,
    n: usize,
) -> Result<f64> {
    let first = h_list
        .first()
        .ok_or_else(|| Error::InvalidArgument("step_w needs at least one block".into()))?;
    let mut gram = Matrix::zeros(first.rows(), first.rows());
    for h in h_list {
        gram.add_scaled(1.0, &h.outer_gram());
    }
    step_w_from_gram(&gram, round_s, rule, gamma, n)
}

/// Projected gradient step on H: `H ← P(H − g/c)`.
pub fn pgd_step_h(h: &mut Matrix, grad: &Matrix, c: f64, constraint: HConstraint) {
    let step = 1.0 / c;
    h.add_scaled(-step, grad);
    constraint.project_in_place(h);
}

/// Unprojected gradient step on W: `W ← W − g/d`.
pub fn gd_step_w(w: &mut Matrix, grad: &Matrix, d: f64) {
    let step = 1.0 / d;
    w.add_scaled(-step, grad);
}

/// Projected gradient step on W: `W ← P_box(W − g/d)`.
pub fn pgd_step_w(w: &mut Matrix, grad: &Matrix, d: f64, lo: f64, hi: f64) -> Result<()> {
    gd_step_w(w, grad, d);
    project_box_in_place(w, lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frob_norm_sq, Rng};

    fn single_shard(x: Matrix) -> DataShard {
        DataShard::new(x, 1.0, None).unwrap()
    }

    fn random_problem(
        m: usize,
        counts: &[usize],
        k: usize,
        rho: f64,
        nu: f64,
        rng: &mut Rng,
    ) -> Problem {
        let blocks = counts
            .iter()
            .map(|&c| (Matrix::from_fn(m, c, |_, _| rng.uniform(-1.0, 2.0)), None))
            .collect();
        Problem::from_matrices(blocks, k, rho, nu, HConstraint::Nonneg).unwrap()
    }

    fn random_state(problem: &Problem, rng: &mut Rng) -> FactorState {
        let w = Matrix::from_fn(problem.features(), problem.clusters(), |_, _| {
            rng.uniform(-1.0, 1.0)
        });
        let h = problem
            .shards()
            .iter()
            .map(|s| Matrix::from_fn(problem.clusters(), s.n_samples(), |_, _| rng.uniform(0.0, 1.0)))
            .collect();
        FactorState { w, h }
    }

    #[test]
    fn reg_h_direct_values() {
        let h = Matrix::from_rows(2, 1, &[1.0, 1.0]).unwrap();
        let got = reg_h(&h, 2.0, 0.0).unwrap();
        assert!((got - 2.0).abs() < 1e-15);

        // One-hot columns: (1ᵀh)² = ‖h‖², so the orthogonality term vanishes.
        let onehot = Matrix::from_rows(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        for rho in [0.5, 3.0, 100.0] {
            assert_eq!(reg_h(&onehot, rho, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn reg_h_matches_column_loop_oracle() {
        let mut rng = Rng::from_seed(2);
        let h = Matrix::from_fn(4, 7, |_, _| rng.uniform(-1.0, 1.0));
        let (rho, nu) = (0.7, 0.3);
        let mut want = 0.0;
        for j in 0..7 {
            let col = h.col(j);
            let s: f64 = col.iter().sum();
            let sq: f64 = col.iter().map(|v| v * v).sum();
            want += 0.5 * rho * (s * s - sq) + 0.5 * nu * sq;
        }
        let got = reg_h(&h, rho, nu).unwrap();
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn reg_h_rejects_negative_penalties() {
        let h = Matrix::identity(2);
        assert!(reg_h(&h, -1.0, 0.0).is_err());
        assert!(reg_h(&h, 0.0, -1e-30).is_err());
    }

    #[test]
    fn objective_local_exact_fit_is_zero() {
        let mut rng = Rng::from_seed(3);
        let w = Matrix::from_fn(5, 2, |_, _| rng.uniform(0.0, 1.0));
        let h = Matrix::from_fn(2, 6, |_, _| rng.uniform(0.0, 1.0));
        let shard = single_shard(w.mul(&h));
        let f = objective_local(&w, &h, &shard, 0.0, 0.0).unwrap();
        assert!(f.abs() < 1e-24);
    }

    #[test]
    fn objective_local_identity_example() {
        // W = I, H = 0, X = I, N_p = 2: ‖I‖²/2 = 1.
        let w = Matrix::identity(2);
        let h = Matrix::zeros(2, 2);
        let shard = single_shard(Matrix::identity(2));
        let f = objective_local(&w, &h, &shard, 0.0, 0.0).unwrap();
        assert!((f - 1.0).abs() < 1e-15);
    }

    #[test]
    fn objective_local_matches_naive_matmul_oracle() {
        let mut rng = Rng::from_seed(4);
        let w = Matrix::from_fn(4, 3, |_, _| rng.uniform(-1.0, 1.0));
        let h = Matrix::from_fn(3, 5, |_, _| rng.uniform(-1.0, 1.0));
        let x = Matrix::from_fn(4, 5, |_, _| rng.uniform(-1.0, 1.0));
        let shard = single_shard(x.clone());
        let (rho, nu) = (0.2, 0.1);

        // Triple-loop product, then the formula verbatim.
        let mut fit = 0.0;
        for j in 0..5 {
            for i in 0..4 {
                let mut wh = 0.0;
                for l in 0..3 {
                    wh += w.get(i, l) * h.get(l, j);
                }
                fit += (x.get(i, j) - wh) * (x.get(i, j) - wh);
            }
        }
        let want = fit / 5.0 + reg_h(&h, rho, nu).unwrap();
        let got = objective_local(&w, &h, &shard, rho, nu).unwrap();
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn objective_global_single_shard_reduces_to_local() {
        let mut rng = Rng::from_seed(5);
        let problem = random_problem(4, &[6], 2, 0.1, 0.05, &mut rng);
        let state = random_state(&problem, &mut rng);
        let f_global = objective_global(&state, &problem).unwrap();
        let f_local =
            objective_local(&state.w, &state.h[0], problem.shard(0), 0.1, 0.05).unwrap();
        assert!((f_global - f_local).abs() <= 1e-12 * f_local.abs().max(1.0));
    }

    #[test]
    fn objective_global_matches_concatenated_instance() {
        let mut rng = Rng::from_seed(6);
        let problem = random_problem(4, &[3, 5], 2, 0.3, 0.2, &mut rng);
        let state = random_state(&problem, &mut rng);
        let f_split = objective_global(&state, &problem).unwrap();

        let x_cat = Matrix::hstack(&[problem.shard(0).x(), problem.shard(1).x()]).unwrap();
        let h_cat = Matrix::hstack(&[&state.h[0], &state.h[1]]).unwrap();
        let cat = single_shard(x_cat);
        let f_cat = objective_local(&state.w, &h_cat, &cat, 0.3, 0.2).unwrap();
        assert!(
            (f_split - f_cat).abs() <= 1e-12 * f_cat.abs().max(1.0),
            "split {f_split} vs concatenated {f_cat}"
        );
    }

    #[test]
    fn grad_h_zero_at_unconstrained_minimizer() {
        // Orthonormal W makes the least-squares assignment H* = WᵀX explicit.
        let mut w = Matrix::zeros(5, 3);
        for i in 0..3 {
            w.set(i, i, 1.0);
        }
        let mut rng = Rng::from_seed(7);
        let x = Matrix::from_fn(5, 4, |_, _| rng.uniform(-1.0, 1.0));
        let h_star = w.transpose_mul(&x);
        let shard = single_shard(x);
        let g = grad_h_local(&w, &h_star, &shard, 0.0, 0.0).unwrap();
        assert!(frob_norm_sq(&g).sqrt() < 1e-10);
    }

    #[test]
    fn grad_h_identity_example() {
        // W = I, X = 0, rho = nu = 0: gradient is (2/N_p) H.
        let w = Matrix::identity(3);
        let mut rng = Rng::from_seed(8);
        let h = Matrix::from_fn(3, 4, |_, _| rng.uniform(-1.0, 1.0));
        let shard = single_shard(Matrix::zeros(3, 4));
        let g = grad_h_local(&w, &h, &shard, 0.0, 0.0).unwrap();
        let want = h.scaled(2.0 / 4.0);
        assert!(crate::linalg::frob_dist_sq(&g, &want) < 1e-28);
    }

    #[test]
    fn grad_h_is_affine_in_x() {
        let mut rng = Rng::from_seed(9);
        let w = Matrix::from_fn(4, 2, |_, _| rng.uniform(-1.0, 1.0));
        let h = Matrix::from_fn(2, 3, |_, _| rng.uniform(-1.0, 1.0));
        let x1 = Matrix::from_fn(4, 3, |_, _| rng.uniform(-1.0, 1.0));
        let x2 = Matrix::from_fn(4, 3, |_, _| rng.uniform(-1.0, 1.0));
        let g = |x: &Matrix| {
            grad_h_local(&w, &h, &single_shard(x.clone()), 0.0, 0.0).unwrap()
        };
        let zero = Matrix::zeros(4, 3);
        let mut sum = x1.clone();
        sum.add_scaled(1.0, &x2);
        // g(x1 + x2) + g(0) = g(x1) + g(x2)
        let mut lhs = g(&sum);
        lhs.add_scaled(1.0, &g(&zero));
        let mut rhs = g(&x1);
        rhs.add_scaled(1.0, &g(&x2));
        assert!(crate::linalg::frob_dist_sq(&lhs, &rhs) < 1e-24);
    }

    fn fd_grad_h(
        w: &Matrix,
        h: &Matrix,
        shard: &DataShard,
        rho: f64,
        nu: f64,
        step: f64,
    ) -> Matrix {
        Matrix::from_fn(h.rows(), h.cols(), |i, j| {
            let mut hp = h.clone();
            hp.set(i, j, h.get(i, j) + step);
            let fp = objective_local(w, &hp, shard, rho, nu).unwrap();
            hp.set(i, j, h.get(i, j) - step);
            let fm = objective_local(w, &hp, shard, rho, nu).unwrap();
            (fp - fm) / (2.0 * step)
        })
    }

    #[test]
    fn grad_h_matches_finite_differences() {
        let mut rng = Rng::from_seed(10);
        for trial in 0..5 {
            let (rho, nu) = if trial % 2 == 0 { (0.4, 0.2) } else { (0.0, 0.0) };
            let w = Matrix::from_fn(5, 3, |_, _| rng.uniform(-1.0, 1.0));
            let h = Matrix::from_fn(3, 4, |_, _| rng.uniform(-1.0, 1.0));
            let x = Matrix::from_fn(5, 4, |_, _| rng.uniform(-1.0, 1.0));
            let shard = single_shard(x);
            let g = grad_h_local(&w, &h, &shard, rho, nu).unwrap();
            let fd = fd_grad_h(&w, &h, &shard, rho, nu, 1e-6);
            let rel = crate::linalg::frob_dist_sq(&g, &fd).sqrt() / frob_norm_sq(&fd).sqrt();
            assert!(rel < 1e-5, "relative error {rel}");
        }
    }

    #[test]
    fn grad_w_zero_cases() {
        let mut rng = Rng::from_seed(11);
        let problem = random_problem(4, &[3, 4], 2, 0.0, 0.0, &mut rng);
        let w = Matrix::from_fn(4, 2, |_, _| rng.uniform(-1.0, 1.0));
        let h = vec![Matrix::zeros(2, 3), Matrix::zeros(2, 4)];
        let g = grad_w(&w, &h, problem.shards()).unwrap();
        // H = 0 kills both terms.
        assert_eq!(frob_norm_sq(&g), 0.0);

        // Exact fit with identity factors: gradient cancels.
        let shard = single_shard(Matrix::identity(3));
        let g =
            grad_w_shard(&Matrix::identity(3), &Matrix::identity(3), &shard).unwrap();
        assert_eq!(frob_norm_sq(&g), 0.0);
    }

    #[test]
    fn grad_w_matches_finite_differences() {
        let mut rng = Rng::from_seed(12);
        let problem = random_problem(4, &[3, 5], 2, 0.25, 0.1, &mut rng);
        let state = random_state(&problem, &mut rng);
        let g = grad_w(&state.w, &state.h, problem.shards()).unwrap();
        let step = 1e-6;
        let fd = Matrix::from_fn(4, 2, |i, j| {
            let mut s = state.clone();
            s.w.set(i, j, state.w.get(i, j) + step);
            let fp = objective_global(&s, &problem).unwrap();
            s.w.set(i, j, state.w.get(i, j) - step);
            let fm = objective_global(&s, &problem).unwrap();
            (fp - fm) / (2.0 * step)
        });
        let rel = crate::linalg::frob_dist_sq(&g, &fd).sqrt() / frob_norm_sq(&fd).sqrt();
        assert!(rel < 1e-5, "relative error {rel}");
    }

    #[test]
    fn step_h_examples() {
        let shard = single_shard(Matrix::identity(4));
        let w = Matrix::identity(4);
        let c = step_h(&w, &shard, HStepRule::HalfSpectral, 0.0, 0.0, 0.0).unwrap();
        assert!((c - 0.5).abs() < 1e-9);

        // lambda = 1, L_H = 2/N_p, c = (gamma/2) L_H = 2/N_p at gamma = 2.
        let c = step_h(&w, &shard, HStepRule::ScaledLipschitz, 2.0, 0.0, 0.0).unwrap();
        assert!((c - 2.0 / 4.0).abs() < 1e-9);

        assert!(matches!(
            step_h(&w, &shard, HStepRule::ScaledLipschitz, 1.0, 0.0, 0.0),
            Err(Error::GammaTooSmall(_))
        ));
    }

    #[test]
    fn step_h_half_spectral_matches_jacobi_half_lambda() {
        let mut rng = Rng::from_seed(13);
        let w = Matrix::from_fn(6, 3, |_, _| rng.uniform(-1.0, 1.0));
        let shard = single_shard(Matrix::from_fn(6, 5, |_, _| rng.uniform(0.0, 1.0)));
        let c = step_h(&w, &shard, HStepRule::HalfSpectral, 0.0, 0.0, 0.0).unwrap();
        // Oracle via very tight power iteration on the same Gram matrix.
        let lam = lambda_max_psd(&w.gram(), 1e-14, 500_000).unwrap();
        assert!((c - 0.5 * lam).abs() <= 1e-8 * lam);
    }

    #[test]
    fn step_w_examples() {
        let h = vec![Matrix::identity(3)];
        let d = step_w(&h, 1, WStepRule::Spectral, 0.0, 3).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
        let d = step_w(&h, 1, WStepRule::HalfSpectral, 0.0, 3).unwrap();
        assert!((d - 0.5).abs() < 1e-9);
        // L_W = (2/3) * 1; s = 3 gives (s+1) L_W = 8/3.
        let d = step_w(&h, 3, WStepRule::DiminishingLipschitz, 0.0, 3).unwrap();
        assert!((d - 4.0 * 2.0 / 3.0).abs() < 1e-9);
        assert!(matches!(
            step_w(&h, 1, WStepRule::ScaledLipschitz, 0.9, 3),
            Err(Error::GammaTooSmall(_))
        ));
    }

    #[test]
    fn pgd_step_with_lipschitz_coefficient_descends() {
        let mut rng = Rng::from_seed(14);
        for _ in 0..100 {
            let w = Matrix::from_fn(5, 3, |_, _| rng.uniform(-1.0, 1.0));
            let h = Matrix::from_fn(3, 6, |_, _| rng.uniform(0.0, 1.0));
            let x = Matrix::from_fn(5, 6, |_, _| rng.uniform(-1.0, 1.0));
            let shard = single_shard(x);
            let (rho, nu) = (0.05, 0.01);
            // c = L_H exactly (gamma = 2 in the scaled rule).
            let c = step_h(&w, &shard, HStepRule::ScaledLipschitz, 2.0, rho, nu).unwrap();
            let f0 = objective_local(&w, &h, &shard, rho, nu).unwrap();
            let g = grad_h_local(&w, &h, &shard, rho, nu).unwrap();
            let mut h1 = h.clone();
            pgd_step_h(&mut h1, &g, c, HConstraint::Nonneg);
            let f1 = objective_local(&w, &h1, &shard, rho, nu).unwrap();
            assert!(
                f1 <= f0 + 1e-12 * f0.abs().max(1.0),
                "objective rose: {f0} -> {f1}"
            );
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let w = Matrix::identity(3);
        let h = Matrix::zeros(2, 4);
        let shard = single_shard(Matrix::zeros(3, 4));
        assert!(objective_local(&w, &h, &shard, 0.0, 0.0).is_err());
        assert!(grad_h_local(&w, &h, &shard, 0.0, 0.0).is_err());
        assert!(grad_w_shard(&w, &h, &shard).is_err());
    }

    #[test]
    fn problem_weights_are_validated() {
        let x = Matrix::identity(3);
        let bad = DataShard::new(x.clone(), 0.5, None).unwrap();
        assert!(Problem::new(vec![bad], 2, 0.0, 0.0, HConstraint::Nonneg).is_err());
        let good = DataShard::new(x, 1.0, None).unwrap();
        let p = Problem::new(vec![good], 2, 0.0, 0.0, HConstraint::Nonneg).unwrap();
        assert_eq!(p.w_box(), (0.0, 1.0));
    }
}
