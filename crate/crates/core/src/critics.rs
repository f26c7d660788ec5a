//! Critic architectures mapping a batch of `K` pairs to a `K x K` score
//! matrix with `scores[i][j] = f(x_i, y_j)`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::nn::{
    backward_layers, forward_layers, init_mlp_with_rng, mlp_backward, mlp_forward, Dense, Matrix,
    MlpCache, MlpParams, Parameters,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticKind {
    /// `x^T y`, no parameters.
    Inner,
    /// `x^T W y`.
    Bilinear,
    /// `f1(x)^T f2(y)`.
    Separable,
    /// `f([x, y])`.
    Joint,
}

impl CriticKind {
    pub fn name(self) -> &'static str {
        match self {
            CriticKind::Inner => "inner",
            CriticKind::Bilinear => "bilinear",
            CriticKind::Separable => "separable",
            CriticKind::Joint => "joint",
        }
    }

    pub const ALL: [CriticKind; 4] = [
        CriticKind::Inner,
        CriticKind::Bilinear,
        CriticKind::Separable,
        CriticKind::Joint,
    ];
}

fn default_hidden() -> usize {
    256
}
fn default_depth() -> usize {
    2
}
fn default_embed() -> usize {
    32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticConfig {
    pub kind: CriticKind,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    /// Number of weight matrices per MLP.
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Output width of the separable embedding networks.
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
}

impl CriticConfig {
    pub fn new(kind: CriticKind) -> Self {
        Self {
            kind,
            hidden_dim: default_hidden(),
            depth: default_depth(),
            embed_dim: default_embed(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("depth", self.depth),
            ("embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return Err(Error::config(format!("critic.{name}"), "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Trainable critic weights; gradients share the layout.
#[derive(Debug, Clone, PartialEq)]
pub enum CriticParams {
    Inner,
    Bilinear { w: Matrix },
    Separable { f1: MlpParams, f2: MlpParams },
    Joint { f: MlpParams },
}

pub type CriticGrads = CriticParams;

impl CriticParams {
    pub fn kind(&self) -> CriticKind {
        match self {
            CriticParams::Inner => CriticKind::Inner,
            CriticParams::Bilinear { .. } => CriticKind::Bilinear,
            CriticParams::Separable { .. } => CriticKind::Separable,
            CriticParams::Joint { .. } => CriticKind::Joint,
        }
    }
}

impl Parameters for CriticParams {
    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            CriticParams::Inner => Vec::new(),
            CriticParams::Bilinear { w } => vec![w.data()],
            CriticParams::Separable { f1, f2 } => {
                let mut t = f1.tensors();
                t.extend(f2.tensors());
                t
            }
            CriticParams::Joint { f } => f.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            CriticParams::Inner => Vec::new(),
            CriticParams::Bilinear { w } => vec![w.data_mut()],
            CriticParams::Separable { f1, f2 } => {
                let mut t = f1.tensors_mut();
                t.extend(f2.tensors_mut());
                t
            }
            CriticParams::Joint { f } => f.tensors_mut(),
        }
    }
}

/// Initializes critic weights for inputs of width `d_x` and `d_y`.
///
/// Bilinear starts at the (rectangular) identity plus U(-0.01, 0.01) noise.
pub fn init_critic<R: Rng + ?Sized>(
    config: &CriticConfig,
    d_x: usize,
    d_y: usize,
    rng: &mut R,
) -> Result<CriticParams> {
    config.validate()?;
    if d_x == 0 || d_y == 0 {
        return Err(Error::config("critic", "input dimensions must be at least 1"));
    }
    Ok(match config.kind {
        CriticKind::Inner => {
            if d_x != d_y {
                return Err(Error::config(
                    "critic.kind",
                    format!("inner critic needs equal dimensions, got {d_x} and {d_y}"),
                ));
            }
            CriticParams::Inner
        }
        CriticKind::Bilinear => {
            let noise = Uniform::new_inclusive(-0.01, 0.01).expect("finite");
            let w = Matrix::from_fn(d_x, d_y, |i, j| {
                let base = if i == j { 1.0 } else { 0.0 };
                base + noise.sample(rng)
            });
            CriticParams::Bilinear { w }
        }
        CriticKind::Separable => CriticParams::Separable {
            f1: init_mlp_with_rng(d_x, config.hidden_dim, config.depth, config.embed_dim, rng)?,
            f2: init_mlp_with_rng(d_y, config.hidden_dim, config.depth, config.embed_dim, rng)?,
        },
        CriticKind::Joint => CriticParams::Joint {
            f: init_mlp_with_rng(d_x + d_y, config.hidden_dim, config.depth, 1, rng)?,
        },
    })
}

/// `K x K` critic outputs. Diagonal entries score joint pairs, off-diagonal
/// entries score marginal pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(Matrix);

impl ScoreMatrix {
    pub fn new(scores: Matrix) -> Result<Self> {
        if scores.rows() != scores.cols() {
            return Err(Error::Shape(format!(
                "score matrix must be square, got {}x{}",
                scores.rows(),
                scores.cols()
            )));
        }
        if scores.rows() < 2 {
            return Err(Error::Shape("score matrix needs K >= 2".into()));
        }
        if !scores.is_finite() {
            return Err(Error::Numeric("critic produced non-finite scores".into()));
        }
        Ok(Self(scores))
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Forward-pass record needed by [`score_backward`].
#[derive(Debug, Clone)]
pub struct CriticCache {
    k: usize,
    mlp_rows: usize,
    inner: CacheKind,
}

#[derive(Debug, Clone)]
enum CacheKind {
    Inner,
    Bilinear {
        x: Matrix,
        y: Matrix,
    },
    Separable {
        e1: Matrix,
        e2: Matrix,
        c1: MlpCache,
        c2: MlpCache,
    },
    Joint {
        x: Matrix,
        y: Matrix,
        /// `relu` of the first layer over all `K^2` pairs; absent for depth 1.
        hidden: Option<MlpCache>,
    },
}

impl CriticCache {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Rows pushed through hidden MLP layers by the forward pass: `K^2` for
    /// the joint critic, `2K` for the separable critic.
    pub fn mlp_rows(&self) -> usize {
        self.mlp_rows
    }
}

fn check_batch(config: &CriticConfig, params: &CriticParams, x: &Matrix, y: &Matrix) -> Result<()> {
    if params.kind() != config.kind {
        return Err(Error::Shape(format!(
            "config is {} but parameters are {}",
            config.kind.name(),
            params.kind().name()
        )));
    }
    if x.rows() != y.rows() {
        return Err(Error::Shape(format!(
            "batch sizes differ: {} vs {}",
            x.rows(),
            y.rows()
        )));
    }
    if x.rows() < 2 {
        return Err(Error::Shape("batch needs K >= 2".into()));
    }
    let expect = |what: &str, got: usize, want: usize| -> Result<()> {
        if got == want {
            Ok(())
        } else {
            Err(Error::Shape(format!("{what}: got {got} columns, critic expects {want}")))
        }
    };
    match params {
        CriticParams::Inner => expect("y", y.cols(), x.cols()),
        CriticParams::Bilinear { w } => {
            expect("x", x.cols(), w.rows())?;
            expect("y", y.cols(), w.cols())
        }
        CriticParams::Separable { f1, f2 } => {
            expect("x", x.cols(), f1.input_dim())?;
            expect("y", y.cols(), f2.input_dim())?;
            if f1.output_dim() != f2.output_dim() {
                return Err(Error::Shape("separable embeddings differ in width".into()));
            }
            Ok(())
        }
        CriticParams::Joint { f } => {
            expect("[x, y]", x.cols() + y.cols(), f.input_dim())?;
            expect("joint output", f.output_dim(), 1)
        }
    }
}

/// Scores every ordered pair `(x_i, y_j)`.
pub fn score_matrix(
    config: &CriticConfig,
    params: &CriticParams,
    batch_x: &Matrix,
    batch_y: &Matrix,
) -> Result<(ScoreMatrix, CriticCache)> {
    check_batch(config, params, batch_x, batch_y)?;
    let k = batch_x.rows();
    let (scores, mlp_rows, inner) = match params {
        CriticParams::Inner => (batch_x.matmul_t(batch_y)?, 0, CacheKind::Inner),
        CriticParams::Bilinear { w } => {
            let xw = batch_x.matmul(w)?;
            (
                xw.matmul_t(batch_y)?,
                0,
                CacheKind::Bilinear {
                    x: batch_x.clone(),
                    y: batch_y.clone(),
                },
            )
        }
        CriticParams::Separable { f1, f2 } => {
            let (e1, c1) = mlp_forward(f1, batch_x)?;
            let (e2, c2) = mlp_forward(f2, batch_y)?;
            (e1.matmul_t(&e2)?, 2 * k, CacheKind::Separable { e1, e2, c1, c2 })
        }
        CriticParams::Joint { f } => joint_forward(f, batch_x, batch_y)?,
    };
    let cache = CriticCache { k, mlp_rows, inner };
    Ok((ScoreMatrix::new(scores)?, cache))
}

/// The first layer acting on `[x_i, y_j]` splits as `W_x x_i + W_y y_j + b`,
/// so the `K^2` pair rows are assembled from `2K` projections and only the
/// remaining layers run on all pairs.
fn joint_forward(f: &MlpParams, x: &Matrix, y: &Matrix) -> Result<(Matrix, usize, CacheKind)> {
    let k = x.rows();
    let first = &f.layers()[0];
    let dx = x.cols();
    let wx = first.weight.columns(0, dx);
    let wy = first.weight.columns(dx, first.in_dim());
    let a = x.matmul_t(&wx)?;
    let b = y.matmul_t(&wy)?;
    let width = first.out_dim();
    let mut z = Matrix::zeros(k * k, width);
    for i in 0..k {
        let ai = a.row(i);
        for j in 0..k {
            let bj = b.row(j);
            let row = z.row_mut(i * k + j);
            for c in 0..width {
                row[c] = ai[c] + bj[c] + first.bias[c];
            }
        }
    }
    let (out, hidden) = if f.depth() == 1 {
        (z, None)
    } else {
        z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let (out, tail) = forward_layers(f, 1, z)?;
        (out, Some(tail))
    };
    let scores = Matrix::from_vec(k, k, out.into_vec())?;
    Ok((
        scores,
        k * k,
        CacheKind::Joint {
            x: x.clone(),
            y: y.clone(),
            hidden,
        },
    ))
}

/// Gradients of `sum_ij grad_scores[i][j] * scores[i][j]` w.r.t. the critic
/// parameters.
pub fn score_backward(
    config: &CriticConfig,
    params: &CriticParams,
    cache: &CriticCache,
    grad_scores: &Matrix,
) -> Result<CriticGrads> {
    if params.kind() != config.kind {
        return Err(Error::Shape("config and parameters disagree on critic kind".into()));
    }
    if grad_scores.shape() != (cache.k, cache.k) {
        return Err(Error::Shape(format!(
            "grad_scores is {}x{}, cache holds K = {}",
            grad_scores.rows(),
            grad_scores.cols(),
            cache.k
        )));
    }
    match (params, &cache.inner) {
        (CriticParams::Inner, CacheKind::Inner) => Ok(CriticParams::Inner),
        (CriticParams::Bilinear { w }, CacheKind::Bilinear { x, y }) => {
            if (x.cols(), y.cols()) != w.shape() {
                return Err(Error::Shape("stale bilinear cache".into()));
            }
            let gy = grad_scores.matmul(y)?;
            Ok(CriticParams::Bilinear { w: x.t_matmul(&gy)? })
        }
        (CriticParams::Separable { f1, f2 }, CacheKind::Separable { e1, e2, c1, c2 }) => {
            let d_e1 = grad_scores.matmul(e2)?;
            let d_e2 = grad_scores.t_matmul(e1)?;
            Ok(CriticParams::Separable {
                f1: mlp_backward(f1, c1, &d_e1)?,
                f2: mlp_backward(f2, c2, &d_e2)?,
            })
        }
        (CriticParams::Joint { f }, CacheKind::Joint { x, y, hidden }) => {
            joint_backward(f, x, y, hidden.as_ref(), grad_scores)
        }
        _ => Err(Error::Shape("cache was produced by a different critic kind".into())),
    }
}

fn joint_backward(
    f: &MlpParams,
    x: &Matrix,
    y: &Matrix,
    hidden: Option<&MlpCache>,
    grad_scores: &Matrix,
) -> Result<CriticGrads> {
    let k = x.rows();
    let first = &f.layers()[0];
    if x.cols() + y.cols() != first.in_dim() {
        return Err(Error::Shape("stale joint cache".into()));
    }
    let g_out = Matrix::from_vec(k * k, 1, grad_scores.data().to_vec())?;
    let (mut grads, g0) = match hidden {
        None => (Vec::new(), g_out),
        Some(tail) => {
            let h1 = tail.layer_input(0);
            let (tail_grads, dh) = backward_layers(f, tail, &g_out, true)?;
            let mut dh = dh.expect("input gradient requested");
            for (g, &h) in dh.data_mut().iter_mut().zip(h1.data()) {
                if h <= 0.0 {
                    *g = 0.0;
                }
            }
            (tail_grads, dh)
        }
    };
    let width = first.out_dim();
    let mut gx = Matrix::zeros(k, width);
    let mut gy = Matrix::zeros(k, width);
    let mut db = vec![0.0; width];
    for i in 0..k {
        for j in 0..k {
            let row = g0.row(i * k + j);
            for c in 0..width {
                gx.row_mut(i)[c] += row[c];
                gy.row_mut(j)[c] += row[c];
                db[c] += row[c];
            }
        }
    }
    let dwx = gx.t_matmul(x)?;
    let dwy = gy.t_matmul(y)?;
    grads.insert(
        0,
        Dense {
            weight: dwx.hcat(&dwy)?,
            bias: db,
        },
    );
    Ok(CriticParams::Joint {
        f: MlpParams::new(grads)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn batch(k: usize, d: usize, salt: usize) -> Matrix {
        Matrix::from_fn(k, d, |i, j| (((i * 31 + j * 17 + salt * 7) % 13) as f64) / 6.0 - 1.0)
    }

    fn weighted_sum(
        cfg: &CriticConfig,
        p: &CriticParams,
        x: &Matrix,
        y: &Matrix,
        g: &Matrix,
    ) -> f64 {
        let (s, _) = score_matrix(cfg, p, x, y).unwrap();
        s.matrix().data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
    }

    fn small(kind: CriticKind) -> CriticConfig {
        CriticConfig {
            kind,
            hidden_dim: 6,
            depth: 2,
            embed_dim: 3,
        }
    }

    #[test]
    fn inner_critic_on_basis_rows_gives_identity() {
        let cfg = CriticConfig::new(CriticKind::Inner);
        let e = Matrix::identity(4);
        let (s, cache) = score_matrix(&cfg, &CriticParams::Inner, &e, &e).unwrap();
        assert_eq!(s.matrix(), &Matrix::identity(4));
        let g = score_backward(&cfg, &CriticParams::Inner, &cache, &Matrix::zeros(4, 4)).unwrap();
        assert!(g.tensors().is_empty());
    }

    #[test]
    fn bilinear_identity_equals_inner() {
        let x = batch(5, 3, 0);
        let y = batch(5, 3, 1);
        let (inner, _) =
            score_matrix(&CriticConfig::new(CriticKind::Inner), &CriticParams::Inner, &x, &y).unwrap();
        let bi = CriticParams::Bilinear { w: Matrix::identity(3) };
        let (s, _) = score_matrix(&CriticConfig::new(CriticKind::Bilinear), &bi, &x, &y).unwrap();
        assert_eq!(s, inner);
    }

    #[test]
    fn separable_two_by_two_by_hand() {
        // f1(x) = 2x + 1, f2(y) = -y + 0.5 on scalar inputs.
        let f1 = MlpParams::new(vec![Dense {
            weight: Matrix::new(1, 1, vec![2.0]).unwrap(),
            bias: vec![1.0],
        }])
        .unwrap();
        let f2 = MlpParams::new(vec![Dense {
            weight: Matrix::new(1, 1, vec![-1.0]).unwrap(),
            bias: vec![0.5],
        }])
        .unwrap();
        let p = CriticParams::Separable { f1, f2 };
        let cfg = CriticConfig {
            depth: 1,
            embed_dim: 1,
            ..CriticConfig::new(CriticKind::Separable)
        };
        let x = Matrix::new(2, 1, vec![0.5, -1.0]).unwrap();
        let y = Matrix::new(2, 1, vec![3.0, 0.25]).unwrap();
        let (s, cache) = score_matrix(&cfg, &p, &x, &y).unwrap();
        // f1: [2, -1]; f2: [-2.5, 0.25]
        let want = [[-5.0, 0.5], [2.5, -0.25]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((s.get(i, j) - want[i][j]).abs() < 1e-12);
            }
        }
        assert_eq!(cache.mlp_rows(), 4);
    }

    #[test]
    fn joint_matches_per_pair_loop() {
        for depth in [1, 2, 3] {
            let cfg = CriticConfig {
                depth,
                ..small(CriticKind::Joint)
            };
            let mut p = init_critic(&cfg, 3, 2, &mut seeded(4)).unwrap();
            if let CriticParams::Joint { f } = &mut p {
                for l in f.layers_mut() {
                    l.bias.iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * i as f64 - 0.2);
                }
            }
            let x = batch(4, 3, 2);
            let y = batch(4, 2, 5);
            let (s, cache) = score_matrix(&cfg, &p, &x, &y).unwrap();
            assert_eq!(cache.mlp_rows(), 16);
            let CriticParams::Joint { f } = &p else { unreachable!() };
            for i in 0..4 {
                for j in 0..4 {
                    let row = [x.row(i), y.row(j)].concat();
                    let (o, _) = mlp_forward(f, &Matrix::new(1, 5, row).unwrap()).unwrap();
                    assert!((s.get(i, j) - o.get(0, 0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn joint_diagonal_gradient_is_sum_of_pair_gradients() {
        let cfg = small(CriticKind::Joint);
        let p = init_critic(&cfg, 2, 2, &mut seeded(9)).unwrap();
        let CriticParams::Joint { f } = &p else { unreachable!() };
        let x = batch(3, 2, 0);
        let y = batch(3, 2, 3);
        let (_, cache) = score_matrix(&cfg, &p, &x, &y).unwrap();
        let g = Matrix::from_fn(3, 3, |i, j| if i == j { 1.0 + i as f64 } else { 0.0 });
        let CriticParams::Joint { f: got } = score_backward(&cfg, &p, &cache, &g).unwrap() else {
            unreachable!()
        };
        let mut want = f.zeros_like();
        for i in 0..3 {
            let row = Matrix::new(1, 4, [x.row(i), y.row(i)].concat()).unwrap();
            let (_, c) = mlp_forward(f, &row).unwrap();
            let gi = mlp_backward(f, &c, &Matrix::new(1, 1, vec![1.0 + i as f64]).unwrap()).unwrap();
            for (w, d) in want.tensors_mut().into_iter().zip(gi.tensors()) {
                w.iter_mut().zip(d).for_each(|(a, b)| *a += b);
            }
        }
        for (a, b) in got.tensors().iter().zip(want.tensors()) {
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permuting_y_permutes_columns() {
        for kind in CriticKind::ALL {
            let cfg = small(kind);
            let p = init_critic(&cfg, 3, 3, &mut seeded(1)).unwrap();
            let x = batch(4, 3, 0);
            let y = batch(4, 3, 8);
            let perm = [2, 0, 3, 1];
            let yp = Matrix::from_fn(4, 3, |i, j| y.get(perm[i], j));
            let (s, _) = score_matrix(&cfg, &p, &x, &y).unwrap();
            let (sp, _) = score_matrix(&cfg, &p, &x, &yp).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(sp.get(i, j), s.get(i, perm[j]), "{kind:?}");
                }
            }
        }
    }

    #[test]
    fn finite_difference_agreement() {
        let h = 1e-5;
        for kind in CriticKind::ALL {
            let cfg = small(kind);
            let p = init_critic(&cfg, 3, 3, &mut seeded(11)).unwrap();
            let x = batch(4, 3, 1);
            let y = batch(4, 3, 6);
            let g = Matrix::from_fn(4, 4, |i, j| ((i * 4 + j) as f64 * 0.37).sin());
            let (_, cache) = score_matrix(&cfg, &p, &x, &y).unwrap();
            let grads = score_backward(&cfg, &p, &cache, &g).unwrap();
            let flat_grads: Vec<f64> = grads.tensors().concat();
            for idx in 0..p.param_len() {
                let bump = |d: f64| {
                    let mut q = p.clone();
                    let mut off = idx;
                    for t in q.tensors_mut() {
                        if off < t.len() {
                            t[off] += d;
                            break;
                        }
                        off -= t.len();
                    }
                    weighted_sum(&cfg, &q, &x, &y, &g)
                };
                let numeric = (bump(h) - bump(-h)) / (2.0 * h);
                let analytic = flat_grads[idx];
                if analytic.abs() > 1e-8 {
                    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
                    assert!(rel <= 1e-4, "{kind:?} coord {idx}: {analytic} vs {numeric}");
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let cfg = small(CriticKind::Joint);
        let p = init_critic(&cfg, 3, 2, &mut seeded(0)).unwrap();
        assert!(score_matrix(&cfg, &p, &batch(4, 3, 0), &batch(4, 3, 0)).is_err());
        assert!(score_matrix(&cfg, &p, &batch(4, 3, 0), &batch(3, 2, 0)).is_err());
        assert!(score_matrix(&cfg, &p, &batch(1, 3, 0), &batch(1, 2, 0)).is_err());
        let (_, cache) = score_matrix(&cfg, &p, &batch(4, 3, 0), &batch(4, 2, 0)).unwrap();
        assert!(score_backward(&cfg, &p, &cache, &Matrix::zeros(3, 3)).is_err());
        assert!(init_critic(&CriticConfig::new(CriticKind::Inner), 3, 4, &mut seeded(0)).is_err());
        let sep = init_critic(&small(CriticKind::Separable), 3, 2, &mut seeded(0)).unwrap();
        assert!(score_backward(&small(CriticKind::Separable), &sep, &cache, &Matrix::zeros(4, 4)).is_err());
    }
}
