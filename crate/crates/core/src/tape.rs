//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! Values are recorded on a [`Tape`] as they are computed; [`Tape::backward`]
//! replays the recording in reverse to accumulate vector-Jacobian products.
//! Vectors are represented as `1 x n` matrices. Every operation's adjoint is
//! verified against central finite differences in this module's tests.

use ndarray::{Array2, Axis};

/// Index of a recorded value on the tape.
pub type Var = usize;

/// Epsilon used inside layer normalization.
pub const LN_EPS: f64 = 1e-5;
/// Guard for the harmonic-mean denominator.
pub const HARMONIC_EPS: f64 = 1e-8;

type BackFn = Box<dyn Fn(&[Array2<f64>], &Array2<f64>) -> Vec<(Var, Array2<f64>)>>;

#[derive(Default)]
pub struct Tape {
    values: Vec<Array2<f64>>,
    backs: Vec<Option<BackFn>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v]
    }

    /// The value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.values[v].dim(), (1, 1));
        self.values[v][(0, 0)]
    }

    fn push(&mut self, value: Array2<f64>, back: Option<BackFn>) -> Var {
        self.values.push(value);
        self.backs.push(back);
        self.values.len() - 1
    }

    /// Insert a constant or parameter. Gradients accumulate here but
    /// propagate no further.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, None)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.values[a].dot(&self.values[b]);
        self.push(
            value,
            Some(Box::new(move |vals, g| {
                vec![(a, g.dot(&vals[b].t())), (b, vals[a].t().dot(g))]
            })),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.values[a].t().to_owned();
        self.push(
            value,
            Some(Box::new(move |_, g| vec![(a, g.t().to_owned())])),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.values[a] + &self.values[b];
        self.push(
            value,
            Some(Box::new(move |_, g| {
                vec![(a, g.clone()), (b, g.clone())]
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.values[a] - &self.values[b];
        self.push(
            value,
            Some(Box::new(move |_, g| vec![(a, g.clone()), (b, -g)])),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.values[a] * &self.values[b];
        self.push(
            value,
            Some(Box::new(move |vals, g| {
                vec![(a, g * &vals[b]), (b, g * &vals[a])]
            })),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = &self.values[a] * c;
        self.push(value, Some(Box::new(move |_, g| vec![(a, g * c)])))
    }

    /// Broadcast-add a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = &self.values[a] + &self.values[row];
        self.push(
            value,
            Some(Box::new(move |_, g| {
                let col_sum = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![(a, g.clone()), (row, col_sum)]
            })),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.values[a].mapv(f64::tanh);
        let out = self.push(value, None);
        self.backs[out] = Some(Box::new(move |vals, g| {
            let y = &vals[out];
            vec![(a, g * &(1.0 - y * y))]
        }));
        out
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.values[a].mapv(|x| if x > 0.0 { x } else { 0.0 });
        self.push(
            value,
            Some(Box::new(move |vals, g| {
                let d = vals[a].mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                vec![(a, g * &d)]
            })),
        )
    }

    /// Row-wise softmax. When `valid_cols` is given, masked columns receive
    /// weight zero (the corresponding scores are treated as negative
    /// infinity). At least one column must remain valid.
    pub fn softmax_rows(&mut self, a: Var, valid_cols: Option<&[bool]>) -> Var {
        let value = softmax_rows_masked(&self.values[a], valid_cols);
        let out = self.push(value, None);
        self.backs[out] = Some(Box::new(move |vals, g| {
            let y = &vals[out];
            let mut da = Array2::zeros(y.dim());
            for r in 0..y.nrows() {
                let gy: f64 = (0..y.ncols()).map(|c| g[(r, c)] * y[(r, c)]).sum();
                for c in 0..y.ncols() {
                    da[(r, c)] = y[(r, c)] * (g[(r, c)] - gy);
                }
            }
            vec![(a, da)]
        }));
        out
    }

    /// Per-row layer normalization with learnable `1 x n` gain and bias.
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = &self.values[x];
        let n = xv.ncols() as f64;
        let mut value = Array2::zeros(xv.dim());
        for r in 0..xv.nrows() {
            let row = xv.row(r);
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for c in 0..xv.ncols() {
                let xhat = (xv[(r, c)] - mean) * inv;
                value[(r, c)] = xhat * self.values[gain][(0, c)] + self.values[bias][(0, c)];
            }
        }
        self.push(
            value,
            Some(Box::new(move |vals, g| {
                let xv = &vals[x];
                let n = xv.ncols() as f64;
                let mut dx = Array2::zeros(xv.dim());
                let mut dgain = Array2::zeros((1, xv.ncols()));
                let mut dbias = Array2::zeros((1, xv.ncols()));
                for r in 0..xv.nrows() {
                    let row = xv.row(r);
                    let mean = row.sum() / n;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    let dxhat: Vec<f64> = (0..xv.ncols())
                        .map(|c| g[(r, c)] * vals[gain][(0, c)])
                        .collect();
                    let m1 = dxhat.iter().sum::<f64>() / n;
                    let m2 = dxhat
                        .iter()
                        .zip(&xhat)
                        .map(|(d, h)| d * h)
                        .sum::<f64>()
                        / n;
                    for c in 0..xv.ncols() {
                        dgain[(0, c)] += g[(r, c)] * xhat[c];
                        dbias[(0, c)] += g[(r, c)];
                        dx[(r, c)] = inv * (dxhat[c] - m1 - xhat[c] * m2);
                    }
                }
                vec![(x, dx), (gain, dgain), (bias, dbias)]
            })),
        )
    }

    /// Column-wise maximum over the valid rows of `a`, producing `1 x n`.
    pub fn max_pool_rows(&mut self, a: Var, valid_rows: &[bool]) -> Var {
        let av = &self.values[a];
        debug_assert_eq!(valid_rows.len(), av.nrows());
        let rows: Vec<usize> = (0..av.nrows()).filter(|&r| valid_rows[r]).collect();
        assert!(!rows.is_empty(), "max pool needs at least one valid row");
        let mut value = Array2::zeros((1, av.ncols()));
        let mut argmax = vec![0usize; av.ncols()];
        for c in 0..av.ncols() {
            let mut best = f64::NEG_INFINITY;
            for &r in &rows {
                if av[(r, c)] > best {
                    best = av[(r, c)];
                    argmax[c] = r;
                }
            }
            value[(0, c)] = best;
        }
        let shape = av.dim();
        self.push(
            value,
            Some(Box::new(move |_, g| {
                let mut da = Array2::zeros(shape);
                for (c, &r) in argmax.iter().enumerate() {
                    da[(r, c)] += g[(0, c)];
                }
                vec![(a, da)]
            })),
        )
    }

    /// Column-wise mean over the valid rows of `a`, producing `1 x n`.
    pub fn mean_rows(&mut self, a: Var, valid_rows: &[bool]) -> Var {
        let av = &self.values[a];
        let rows: Vec<usize> = (0..av.nrows()).filter(|&r| valid_rows[r]).collect();
        assert!(!rows.is_empty(), "mean pool needs at least one valid row");
        let m = rows.len() as f64;
        let mut value = Array2::zeros((1, av.ncols()));
        for &r in &rows {
            for c in 0..av.ncols() {
                value[(0, c)] += av[(r, c)] / m;
            }
        }
        let shape = av.dim();
        self.push(
            value,
            Some(Box::new(move |_, g| {
                let mut da = Array2::zeros(shape);
                for &r in &rows {
                    for c in 0..shape.1 {
                        da[(r, c)] = g[(0, c)] / m;
                    }
                }
                vec![(a, da)]
            })),
        )
    }

    /// Gather rows of `a` by index (duplicates allowed); the adjoint
    /// scatter-adds back, which makes this double as an embedding lookup.
    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let av = &self.values[a];
        let mut value = Array2::zeros((indices.len(), av.ncols()));
        for (i, &r) in indices.iter().enumerate() {
            value.row_mut(i).assign(&av.row(r));
        }
        let shape = av.dim();
        let indices = indices.to_vec();
        self.push(
            value,
            Some(Box::new(move |_, g| {
                let mut da = Array2::zeros(shape);
                for (i, &r) in indices.iter().enumerate() {
                    for c in 0..shape.1 {
                        da[(r, c)] += g[(i, c)];
                    }
                }
                vec![(a, da)]
            })),
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.values[a]
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        let shape = self.values[a].dim();
        self.push(
            value,
            Some(Box::new(move |_, g| {
                let mut da = Array2::zeros(shape);
                da.slice_mut(ndarray::s![.., start..start + len]).assign(g);
                vec![(a, da)]
            })),
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.values[a]
            .slice(ndarray::s![start..start + len, ..])
            .to_owned();
        let shape = self.values[a].dim();
        self.push(
            value,
            Some(Box::new(move |_, g| {
                let mut da = Array2::zeros(shape);
                da.slice_mut(ndarray::s![start..start + len, ..]).assign(g);
                vec![(a, da)]
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.values[parts[0]].nrows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.values[p].ncols()).collect();
        let total: usize = widths.iter().sum();
        let mut value = Array2::zeros((rows, total));
        let mut at = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            value
                .slice_mut(ndarray::s![.., at..at + w])
                .assign(&self.values[p]);
            at += w;
        }
        let parts = parts.to_vec();
        self.push(
            value,
            Some(Box::new(move |_, g| {
                let mut out = Vec::with_capacity(parts.len());
                let mut at = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    out.push((p, g.slice(ndarray::s![.., at..at + w]).to_owned()));
                    at += w;
                }
                out
            })),
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.values[parts[0]].ncols();
        let heights: Vec<usize> = parts.iter().map(|&p| self.values[p].nrows()).collect();
        let total: usize = heights.iter().sum();
        let mut value = Array2::zeros((total, cols));
        let mut at = 0;
        for (&p, &h) in parts.iter().zip(&heights) {
            value
                .slice_mut(ndarray::s![at..at + h, ..])
                .assign(&self.values[p]);
            at += h;
        }
        let parts = parts.to_vec();
        self.push(
            value,
            Some(Box::new(move |_, g| {
                let mut out = Vec::with_capacity(parts.len());
                let mut at = 0;
                for (&p, &h) in parts.iter().zip(&heights) {
                    out.push((p, g.slice(ndarray::s![at..at + h, ..]).to_owned()));
                    at += h;
                }
                out
            })),
        )
    }

    /// Zero out invalid rows.
    pub fn mask_rows(&mut self, a: Var, valid_rows: &[bool]) -> Var {
        let av = &self.values[a];
        let mut value = av.clone();
        for (r, &ok) in valid_rows.iter().enumerate() {
            if !ok {
                value.row_mut(r).fill(0.0);
            }
        }
        let valid = valid_rows.to_vec();
        self.push(
            value,
            Some(Box::new(move |_, g| {
                let mut da = g.clone();
                for (r, &ok) in valid.iter().enumerate() {
                    if !ok {
                        da.row_mut(r).fill(0.0);
                    }
                }
                vec![(a, da)]
            })),
        )
    }

    /// Elementwise harmonic mean `2ab / (a + b)` with a signed-epsilon guard:
    /// where `|a + b| < eps` the result is 0.
    pub fn harmonic_mean(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::Zip::from(&self.values[a])
            .and(&self.values[b])
            .map_collect(|&x, &y| harmonic(x, y));
        self.push(
            value,
            Some(Box::new(move |vals, g| {
                let (av, bv) = (&vals[a], &vals[b]);
                let mut da = Array2::zeros(av.dim());
                let mut db = Array2::zeros(av.dim());
                for r in 0..av.nrows() {
                    for c in 0..av.ncols() {
                        let (x, y) = (av[(r, c)], bv[(r, c)]);
                        let s = x + y;
                        if s.abs() < HARMONIC_EPS {
                            continue;
                        }
                        let d = s + HARMONIC_EPS * s.signum();
                        da[(r, c)] = g[(r, c)] * 2.0 * y * (y + HARMONIC_EPS * s.signum()) / (d * d);
                        db[(r, c)] = g[(r, c)] * 2.0 * x * (x + HARMONIC_EPS * s.signum()) / (d * d);
                    }
                }
                vec![(a, da), (b, db)]
            })),
        )
    }

    /// Pairwise cosine similarity: `out[i][j] = cos(x_i, y_j)` for row
    /// vectors. Norms are clamped away from zero to keep the forward pass
    /// finite; callers validate inputs beforehand.
    pub fn cosine_rows(&mut self, x: Var, y: Var) -> Var {
        const NORM_FLOOR: f64 = 1e-30;
        let (xv, yv) = (&self.values[x], &self.values[y]);
        let xn: Vec<f64> = (0..xv.nrows())
            .map(|i| xv.row(i).dot(&xv.row(i)).sqrt().max(NORM_FLOOR))
            .collect();
        let yn: Vec<f64> = (0..yv.nrows())
            .map(|j| yv.row(j).dot(&yv.row(j)).sqrt().max(NORM_FLOOR))
            .collect();
        let mut value = Array2::zeros((xv.nrows(), yv.nrows()));
        for i in 0..xv.nrows() {
            for j in 0..yv.nrows() {
                value[(i, j)] = xv.row(i).dot(&yv.row(j)) / (xn[i] * yn[j]);
            }
        }
        let out = self.push(value, None);
        self.backs[out] = Some(Box::new(move |vals, g| {
            let (xv, yv) = (&vals[x], &vals[y]);
            let cv = &vals[out];
            let mut dx = Array2::zeros(xv.dim());
            let mut dy = Array2::zeros(yv.dim());
            for i in 0..xv.nrows() {
                for j in 0..yv.nrows() {
                    let gij = g[(i, j)];
                    if gij == 0.0 {
                        continue;
                    }
                    let c = cv[(i, j)];
                    let (nx, ny) = (xn[i], yn[j]);
                    for d in 0..xv.ncols() {
                        dx[(i, d)] +=
                            gij * (yv[(j, d)] / (nx * ny) - c * xv[(i, d)] / (nx * nx));
                        dy[(j, d)] +=
                            gij * (xv[(i, d)] / (nx * ny) - c * yv[(j, d)] / (ny * ny));
                    }
                }
            }
            vec![(x, dx), (y, dy)]
        }));
        out
    }

    /// Mean cross-entropy of row-wise softmax against integer labels,
    /// producing a `1 x 1` scalar.
    pub fn cross_entropy_rows(&mut self, scores: Var, labels: &[usize]) -> Var {
        let sv = &self.values[scores];
        debug_assert_eq!(labels.len(), sv.nrows());
        let probs = softmax_rows_masked(sv, None);
        let b = labels.len() as f64;
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -probs[(i, y)].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / b;
        let labels = labels.to_vec();
        self.push(
            Array2::from_elem((1, 1), loss),
            Some(Box::new(move |vals, g| {
                let probs = softmax_rows_masked(&vals[scores], None);
                let b = labels.len() as f64;
                let mut ds = probs;
                for (i, &y) in labels.iter().enumerate() {
                    ds[(i, y)] -= 1.0;
                }
                ds *= g[(0, 0)] / b;
                vec![(scores, ds)]
            })),
        )
    }

    /// Accumulate gradients of the `1 x 1` node `root` with respect to every
    /// tape value. Returns one gradient array per recorded node.
    pub fn backward(&self, root: Var) -> Vec<Array2<f64>> {
        assert_eq!(self.values[root].dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.values.len()];
        grads[root] = Some(Array2::ones((1, 1)));
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some(back) = &self.backs[i] {
                for (parent, dg) in back(&self.values, &g) {
                    match &mut grads[parent] {
                        Some(acc) => *acc += &dg,
                        slot => *slot = Some(dg),
                    }
                }
            }
            grads[i] = Some(g);
        }
        grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| Array2::zeros(self.values[i].dim())))
            .collect()
    }
}

fn harmonic(x: f64, y: f64) -> f64 {
    let s = x + y;
    if s.abs() < HARMONIC_EPS {
        0.0
    } else {
        2.0 * x * y / (s + HARMONIC_EPS * s.signum())
    }
}

/// Numerically stable row softmax with an optional column validity mask.
pub fn softmax_rows_masked(a: &Array2<f64>, valid_cols: Option<&[bool]>) -> Array2<f64> {
    let mut out = Array2::zeros(a.dim());
    for r in 0..a.nrows() {
        let mut max = f64::NEG_INFINITY;
        for c in 0..a.ncols() {
            if valid_cols.is_none_or(|m| m[c]) {
                max = max.max(a[(r, c)]);
            }
        }
        assert!(max.is_finite(), "softmax over an empty or non-finite key set");
        let mut sum = 0.0;
        for c in 0..a.ncols() {
            if valid_cols.is_none_or(|m| m[c]) {
                let e = (a[(r, c)] - max).exp();
                out[(r, c)] = e;
                sum += e;
            }
        }
        for c in 0..a.ncols() {
            out[(r, c)] /= sum;
        }
    }
    out
}
