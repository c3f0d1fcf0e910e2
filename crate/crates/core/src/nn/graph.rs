use std::collections::HashMap;
use std::sync::Arc;

use super::{mismatch, GradientSet, NnError, ParameterStore, Scalar, SparseMatrix, Tensor, PAD};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

type Backward<T> = Box<dyn Fn(&[T], &[Tensor<T>], &mut Grads<T>)>;

struct Node<T> {
    op: &'static str,
    backward: Option<Backward<T>>,
}

/// Lazily allocated gradient buffers; nodes that do not need a gradient
/// never get one.
pub struct Grads<T> {
    slots: Vec<Option<Vec<T>>>,
    needs: Vec<bool>,
    lens: Vec<usize>,
}

impl<T: Scalar> Grads<T> {
    fn slot(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.needs[v.0] {
            return None;
        }
        let len = self.lens[v.0];
        Some(self.slots[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }
}

/// Reverse-mode tape. Values are computed eagerly as ops are recorded;
/// [`Graph::backward`] then walks the tape once in reverse.
pub struct Graph<T: Scalar> {
    values: Vec<Tensor<T>>,
    nodes: Vec<Node<T>>,
    requires: Vec<bool>,
    params: HashMap<String, Var>,
    grads: Option<Grads<T>>,
    fault: Option<String>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_2d<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize), NnError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(mismatch(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            nodes: Vec::new(),
            requires: Vec::new(),
            params: HashMap::new(),
            grads: None,
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.values[v.0];
        (t.rows(), t.cols())
    }

    /// Gradient of the last `backward` call, if the node received one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.as_ref()?.slots[v.0].as_deref()
    }

    /// A leaf that takes no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf("constant", t, false)
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.leaf("variable", t, true)
    }

    /// Binds a named parameter (once per graph; repeated calls share the node).
    pub fn param(&mut self, store: &ParameterStore<T>, name: &str) -> Result<Var, NnError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))?
            .clone();
        let v = self.leaf("param", t, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameter gradients collected after `backward`.
    pub fn param_grads(&self) -> GradientSet<T> {
        let mut out = GradientSet::default();
        for (name, &v) in &self.params {
            let shape = self.values[v.0].shape().to_vec();
            let data = self
                .grad(v)
                .map(<[T]>::to_vec)
                .unwrap_or_else(|| vec![T::zero(); self.values[v.0].len()]);
            out.insert(
                name.clone(),
                Tensor::new(shape, data).expect("gradient matches parameter shape"),
            );
        }
        out
    }

    /// First op whose forward output was not finite.
    pub fn check(&self) -> Result<(), NnError> {
        match &self.fault {
            Some(op) => Err(NnError::NonFinite { op: op.clone() }),
            None => Ok(()),
        }
    }

    fn leaf(&mut self, op: &'static str, t: Tensor<T>, requires: bool) -> Var {
        if self.fault.is_none() && !t.is_finite() {
            self.fault = Some(op.to_string());
        }
        self.values.push(t);
        self.nodes.push(Node { op, backward: None });
        self.requires.push(requires);
        Var(self.values.len() - 1)
    }

    fn push<F>(&mut self, op: &'static str, value: Tensor<T>, inputs: &[Var], backward: F) -> Var
    where
        F: Fn(&[T], &[Tensor<T>], &mut Grads<T>) + 'static,
    {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(op.to_string());
        }
        let requires = inputs.iter().any(|v| self.requires[v.0]);
        self.values.push(value);
        self.nodes.push(Node {
            op,
            backward: requires.then(|| Box::new(backward) as Backward<T>),
        });
        self.requires.push(requires);
        Var(self.values.len() - 1)
    }

    /// Propagates `d loss / d node` for every node; `loss` must be 1×1.
    pub fn backward(&mut self, loss: Var) -> Result<(), NnError> {
        self.check()?;
        if self.values[loss.0].len() != 1 {
            return Err(mismatch("backward", "loss must be a scalar"));
        }
        let n = self.values.len();
        let mut grads = Grads {
            slots: (0..n).map(|_| None).collect(),
            needs: self.requires.clone(),
            lens: self.values.iter().map(Tensor::len).collect(),
        };
        grads.slots[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads.slots[i].take() else {
                continue;
            };
            if g.iter().any(|x| !x.is_finite()) {
                return Err(NnError::NonFinite {
                    op: format!("{} (backward)", self.nodes[i].op),
                });
            }
            if let Some(bw) = &self.nodes[i].backward {
                bw(&g, &self.values, &mut grads);
            }
            grads.slots[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    // ---- linear algebra ------------------------------------------------

    /// `[n,k] × [k,m] → [n,m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (n, k) = check_2d("matmul", &self.values[a.0])?;
        let (k2, m) = check_2d("matmul", &self.values[b.0])?;
        if k != k2 {
            return Err(mismatch("matmul", format!("[{n},{k}] x [{k2},{m}]")));
        }
        let mut out = vec![T::zero(); n * m];
        T::gemm(
            n,
            k,
            m,
            self.values[a.0].data(),
            k as isize,
            1,
            self.values[b.0].data(),
            m as isize,
            1,
            T::zero(),
            &mut out,
            m as isize,
        );
        let value = Tensor::matrix(n, m, out)?;
        Ok(self.push("matmul", value, &[a, b], move |g, vals, grads| {
            if let Some(da) = grads.slot(a) {
                T::gemm(
                    n,
                    m,
                    k,
                    g,
                    m as isize,
                    1,
                    vals[b.0].data(),
                    1,
                    m as isize,
                    T::one(),
                    da,
                    k as isize,
                );
            }
            if let Some(db) = grads.slot(b) {
                T::gemm(
                    k,
                    n,
                    m,
                    vals[a.0].data(),
                    1,
                    k as isize,
                    g,
                    m as isize,
                    1,
                    T::one(),
                    db,
                    m as isize,
                );
            }
        }))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var) -> Result<(), NnError> {
        let (sa, sb) = (self.values[a.0].shape(), self.values[b.0].shape());
        if sa != sb {
            return Err(mismatch(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("add", a, b)?;
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push("add", value, &[a, b], move |g, _, grads| {
            for v in [a, b] {
                if let Some(d) = grads.slot(v) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                }
            }
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("sub", a, b)?;
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push("sub", value, &[a, b], move |g, _, grads| {
            if let Some(d) = grads.slot(a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
            if let Some(d) = grads.slot(b) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g);
            }
        }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("mul", a, b)?;
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push("mul", value, &[a, b], move |g, vals, grads| {
            if let Some(d) = grads.slot(a) {
                d.iter_mut()
                    .zip(g)
                    .zip(vals[b.0].data())
                    .for_each(|((d, &g), &y)| *d += g * y);
            }
            if let Some(d) = grads.slot(b) {
                d.iter_mut()
                    .zip(g)
                    .zip(vals[a.0].data())
                    .for_each(|((d, &g), &x)| *d += g * x);
            }
        }))
    }

    /// `x·W + b` with `b` a `[1,m]` row; one output buffer instead of two.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let (n, k) = check_2d("affine", &self.values[x.0])?;
        let (k2, m) = check_2d("affine", &self.values[w.0])?;
        if k != k2 || self.values[b.0].shape() != [1, m] {
            return Err(mismatch(
                "affine",
                format!("[{n},{k}] x [{k2},{m}] + {:?}", self.values[b.0].shape()),
            ));
        }
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(self.values[b.0].data());
        }
        T::gemm(
            n,
            k,
            m,
            self.values[x.0].data(),
            k as isize,
            1,
            self.values[w.0].data(),
            m as isize,
            1,
            T::one(),
            &mut out,
            m as isize,
        );
        let value = Tensor::matrix(n, m, out)?;
        Ok(
            self.push("affine", value, &[x, w, b], move |g, vals, grads| {
                if let Some(dx) = grads.slot(x) {
                    T::gemm(
                        n,
                        m,
                        k,
                        g,
                        m as isize,
                        1,
                        vals[w.0].data(),
                        1,
                        m as isize,
                        T::one(),
                        dx,
                        k as isize,
                    );
                }
                if let Some(dw) = grads.slot(w) {
                    T::gemm(
                        k,
                        n,
                        m,
                        vals[x.0].data(),
                        1,
                        k as isize,
                        g,
                        m as isize,
                        1,
                        T::one(),
                        dw,
                        m as isize,
                    );
                }
                if let Some(db) = grads.slot(b) {
                    for gr in g.chunks(m.max(1)) {
                        db.iter_mut().zip(gr).for_each(|(d, &g)| *d += g);
                    }
                }
            }),
        )
    }

    /// Adds a `[1,c]` row to every row of `[n,c]` (bias).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NnError> {
        let (n, c) = check_2d("add_row", &self.values[a.0])?;
        if self.values[row.0].shape() != [1, c] {
            return Err(mismatch(
                "add_row",
                format!("row {:?} for [{n},{c}]", self.values[row.0].shape()),
            ));
        }
        let r = self.values[row.0].data();
        let data = self.values[a.0]
            .data()
            .chunks(c.max(1))
            .flat_map(|x| x.iter().zip(r).map(|(&x, &b)| x + b))
            .collect();
        let value = Tensor::matrix(n, c, data)?;
        Ok(self.push("add_row", value, &[a, row], move |g, _, grads| {
            if let Some(d) = grads.slot(a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
            if let Some(d) = grads.slot(row) {
                for gr in g.chunks(c.max(1)) {
                    d.iter_mut().zip(gr).for_each(|(d, &g)| *d += g);
                }
            }
        }))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let va = &self.values[a.0];
        let value = Tensor::new(
            va.shape().to_vec(),
            va.data().iter().map(|&x| x * s).collect(),
        )
        .expect("same shape");
        self.push("scale", value, &[a], move |g, _, grads| {
            if let Some(d) = grads.slot(a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * s);
            }
        })
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let mut widths = Vec::with_capacity(parts.len());
        let mut rows = None;
        for &p in parts {
            let (r, c) = check_2d("concat_cols", &self.values[p.0])?;
            if *rows.get_or_insert(r) != r {
                return Err(mismatch("concat_cols", "row counts differ"));
            }
            widths.push(c);
        }
        let rows = rows.ok_or_else(|| mismatch("concat_cols", "nothing to concatenate"))?;
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.values[p.0].data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        let parts = parts.to_vec();
        Ok(
            self.push("concat_cols", value, &parts.clone(), move |g, _, grads| {
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    if let Some(d) = grads.slot(p) {
                        for i in 0..rows {
                            let src = &g[i * total + off..i * total + off + w];
                            d[i * w..(i + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, &g)| *d += g);
                        }
                    }
                    off += w;
                }
            }),
        )
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let mut cols = None;
        let mut lens = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let (_, c) = check_2d("concat_rows", &self.values[p.0])?;
            if *cols.get_or_insert(c) != c {
                return Err(mismatch("concat_rows", "column counts differ"));
            }
            lens.push(self.values[p.0].len());
            data.extend_from_slice(self.values[p.0].data());
        }
        let cols = cols.ok_or_else(|| mismatch("concat_rows", "nothing to concatenate"))?;
        let value = Tensor::matrix(data.len() / cols.max(1), cols, data)?;
        let parts = parts.to_vec();
        Ok(
            self.push("concat_rows", value, &parts.clone(), move |g, _, grads| {
                let mut off = 0;
                for (&p, &l) in parts.iter().zip(&lens) {
                    if let Some(d) = grads.slot(p) {
                        d.iter_mut()
                            .zip(&g[off..off + l])
                            .for_each(|(d, &g)| *d += g);
                    }
                    off += l;
                }
            }),
        )
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NnError> {
        let va = &self.values[a.0];
        if va.len() != rows * cols {
            return Err(mismatch(
                "reshape",
                format!("{:?} into [{rows},{cols}]", va.shape()),
            ));
        }
        let value = Tensor::matrix(rows, cols, va.data().to_vec())?;
        Ok(self.push("reshape", value, &[a], move |g, _, grads| {
            if let Some(d) = grads.slot(a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
        }))
    }

    // ---- nonlinearities ------------------------------------------------

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu_named("relu", a, 0.0)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.leaky_relu_named("leaky_relu", a, slope)
    }

    fn leaky_relu_named(&mut self, op: &'static str, a: Var, slope: f64) -> Var {
        let s = T::of(slope);
        let va = &self.values[a.0];
        let data = va
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { x * s })
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        self.push(op, value, &[a], move |g, vals, grads| {
            if let Some(d) = grads.slot(a) {
                for ((d, &g), &x) in d.iter_mut().zip(g).zip(vals[a.0].data()) {
                    *d += if x > T::zero() { g } else { g * s };
                }
            }
        })
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NnError> {
        let (n, c) = check_2d("softmax", &self.values[a.0])?;
        let mut data = self.values[a.0].data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        let value = Tensor::matrix(n, c, data)?;
        let out = Var(self.values.len());
        Ok(self.push("softmax", value, &[a], move |g, vals, grads| {
            if let Some(d) = grads.slot(a) {
                let y = vals[out.0].data();
                for i in 0..n {
                    let (yr, gr) = (&y[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                    let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                    for j in 0..c {
                        d[i * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }))
    }

    // ---- reductions and index ops --------------------------------------

    /// Max over `axis` 0 (→ `[1,c]`) or 1 (→ `[n,1]`).
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var, NnError> {
        let (n, c) = check_2d("max_axis", &self.values[a.0])?;
        match axis {
            0 => self.segmented_max(a, &vec![0; n], 1),
            1 => {
                let t = self.reshape(a, n * c, 1)?;
                let seg: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, c)).collect();
                self.segmented_max(t, &seg, n)
            }
            _ => Err(mismatch("max_axis", format!("axis {axis} on a matrix"))),
        }
    }

    /// Column-wise max of the rows assigned to each of `segments` groups.
    /// Empty groups produce zero rows.
    pub fn segmented_max(
        &mut self,
        a: Var,
        segment: &[usize],
        segments: usize,
    ) -> Result<Var, NnError> {
        let (n, c) = check_2d("segmented_max", &self.values[a.0])?;
        if segment.len() != n || segment.iter().any(|&s| s >= segments) {
            return Err(mismatch("segmented_max", "segment ids do not match rows"));
        }
        let x = self.values[a.0].data();
        let mut arg = vec![PAD; segments * c];
        for (i, &s) in segment.iter().enumerate() {
            for j in 0..c {
                let slot = &mut arg[s * c + j];
                if *slot == PAD || x[i * c + j] > x[*slot * c + j] {
                    *slot = i;
                }
            }
        }
        let data = arg
            .iter()
            .enumerate()
            .map(|(o, &i)| {
                if i == PAD {
                    T::zero()
                } else {
                    x[i * c + o % c]
                }
            })
            .collect();
        let value = Tensor::matrix(segments, c, data)?;
        Ok(self.push("segmented_max", value, &[a], move |g, _, grads| {
            if let Some(d) = grads.slot(a) {
                for (o, &i) in arg.iter().enumerate() {
                    if i != PAD {
                        d[i * c + o % c] += g[o];
                    }
                }
            }
        }))
    }

    /// `out[index[i]] += a[i]` into `rows` output rows.
    pub fn scatter_add(&mut self, a: Var, index: &[usize], rows: usize) -> Result<Var, NnError> {
        let (n, c) = check_2d("scatter_add", &self.values[a.0])?;
        if index.len() != n || index.iter().any(|&i| i >= rows) {
            return Err(mismatch("scatter_add", "index does not match rows"));
        }
        let x = self.values[a.0].data();
        let mut data = vec![T::zero(); rows * c];
        for (i, &t) in index.iter().enumerate() {
            data[t * c..(t + 1) * c]
                .iter_mut()
                .zip(&x[i * c..(i + 1) * c])
                .for_each(|(o, &x)| *o += x);
        }
        let value = Tensor::matrix(rows, c, data)?;
        let index = index.to_vec();
        Ok(self.push("scatter_add", value, &[a], move |g, _, grads| {
            if let Some(d) = grads.slot(a) {
                for (i, &t) in index.iter().enumerate() {
                    d[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&g[t * c..(t + 1) * c])
                        .for_each(|(d, &g)| *d += g);
                }
            }
        }))
    }

    /// `out[i] = a[index[i]]`; [`PAD`] yields a zero row.
    pub fn gather(&mut self, a: Var, index: impl Into<Arc<[usize]>>) -> Result<Var, NnError> {
        let index: Arc<[usize]> = index.into();
        let (n, c) = check_2d("gather", &self.values[a.0])?;
        if index.iter().any(|&i| i != PAD && i >= n) {
            return Err(mismatch(
                "gather",
                format!("index out of range for {n} rows"),
            ));
        }
        let x = self.values[a.0].data();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            if i == PAD {
                data.extend(std::iter::repeat_n(T::zero(), c));
            } else {
                data.extend_from_slice(&x[i * c..(i + 1) * c]);
            }
        }
        let value = Tensor::matrix(index.len(), c, data)?;
        Ok(self.push("gather", value, &[a], move |g, _, grads| {
            if let Some(d) = grads.slot(a) {
                for (o, &i) in index.iter().enumerate() {
                    if i != PAD {
                        d[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(&g[o * c..(o + 1) * c])
                            .for_each(|(d, &g)| *d += g);
                    }
                }
            }
        }))
    }

    /// Sparse-times-dense: `out = S · a`.
    pub fn weighted_gather(&mut self, a: Var, s: Arc<SparseMatrix<T>>) -> Result<Var, NnError> {
        let (n, c) = check_2d("weighted_gather", &self.values[a.0])?;
        if s.ncols != n {
            return Err(mismatch(
                "weighted_gather",
                format!("sparse matrix has {} columns for {n} rows", s.ncols),
            ));
        }
        s.validate()?;
        let x = self.values[a.0].data();
        let rows = s.nrows();
        let mut data = vec![T::zero(); rows * c];
        for r in 0..rows {
            let out = &mut data[r * c..(r + 1) * c];
            for (i, w) in s.row(r) {
                out.iter_mut()
                    .zip(&x[i * c..(i + 1) * c])
                    .for_each(|(o, &x)| *o += w * x);
            }
        }
        let value = Tensor::matrix(rows, c, data)?;
        Ok(
            self.push("weighted_gather", value, &[a], move |g, _, grads| {
                if let Some(d) = grads.slot(a) {
                    for r in 0..rows {
                        let gr = &g[r * c..(r + 1) * c];
                        for (i, w) in s.row(r) {
                            d[i * c..(i + 1) * c]
                                .iter_mut()
                                .zip(gr)
                                .for_each(|(d, &g)| *d += w * g);
                        }
                    }
                }
            }),
        )
    }

    /// Bilinear lookup of a `res × res` grid (rows `y·res + x`) at `uv`
    /// coordinates in `[lo, hi]²`; see [`bilinear_weights`].
    pub fn bilinear_interpolate(
        &mut self,
        grid: Var,
        uv: &[[f64; 2]],
        res: usize,
        lo: f64,
        hi: f64,
    ) -> Result<Var, NnError> {
        let s = bilinear_weights::<T>(uv, res, lo, hi, 0, res * res);
        self.weighted_gather(grid, Arc::new(s))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: T = self.values[a.0].data().iter().copied().sum();
        self.push("sum", Tensor::scalar(total), &[a], move |g, _, grads| {
            if let Some(d) = grads.slot(a) {
                d.iter_mut().for_each(|d| *d += g[0]);
            }
        })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.values[a.0].len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    // ---- losses --------------------------------------------------------

    /// Mean cross entropy of row-wise softmax(`logits`) against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NnError> {
        let (n, c) = check_2d("cross_entropy", &self.values[logits.0])?;
        if labels.len() != n || labels.iter().any(|&l| l >= c) || n == 0 {
            return Err(mismatch("cross_entropy", "labels do not match logits"));
        }
        let mut probs = self.values[logits.0].data().to_vec();
        let mut loss = 0.0;
        for (row, &l) in probs.chunks_mut(c).zip(labels) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<T>().ln();
            loss -= (row[l] - lse).to_f64().unwrap_or(f64::NAN);
            softmax_in_place(row);
        }
        let value = Tensor::scalar(T::of(loss / n as f64));
        let labels = labels.to_vec();
        let inv = T::of(1.0 / n as f64);
        Ok(
            self.push("cross_entropy", value, &[logits], move |g, _, grads| {
                if let Some(d) = grads.slot(logits) {
                    for (i, &l) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == l { T::one() } else { T::zero() };
                            d[i * c + j] += g[0] * inv * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }),
        )
    }

    /// Mean focal loss `−α(1−p_t)^γ log p_t` on probabilities.
    pub fn focal_loss(
        &mut self,
        probs: Var,
        labels: &[usize],
        gamma: f64,
        alpha: f64,
    ) -> Result<Var, NnError> {
        let (n, c) = check_2d("focal_loss", &self.values[probs.0])?;
        if labels.len() != n || labels.iter().any(|&l| l >= c) || n == 0 {
            return Err(mismatch("focal_loss", "labels do not match probabilities"));
        }
        const FLOOR: f64 = 1e-12;
        let p = self.values[probs.0].data();
        let pt: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| p[i * c + l].to_f64().unwrap_or(f64::NAN).max(FLOOR))
            .collect();
        let loss: f64 = pt
            .iter()
            .map(|&p| -alpha * (1.0 - p).powf(gamma) * p.ln())
            .sum::<f64>()
            / n as f64;
        let labels = labels.to_vec();
        Ok(self.push(
            "focal_loss",
            Tensor::scalar(T::of(loss)),
            &[probs],
            move |g, _, grads| {
                if let Some(d) = grads.slot(probs) {
                    let g0 = g[0].to_f64().unwrap_or(f64::NAN) / n as f64;
                    for (i, (&l, &p)) in labels.iter().zip(&pt).enumerate() {
                        let q = 1.0 - p;
                        let dp = if gamma == 0.0 {
                            -alpha / p
                        } else {
                            alpha * (gamma * q.powf(gamma - 1.0) * p.ln() - q.powf(gamma) / p)
                        };
                        d[i * c + l] += T::of(g0 * dp);
                    }
                }
            },
        ))
    }

    /// Mean squared error of an `[n,1]` column against targets.
    pub fn mse(&mut self, pred: Var, targets: &[f64]) -> Result<Var, NnError> {
        let t = &self.values[pred.0];
        if t.len() != targets.len() || targets.is_empty() {
            return Err(mismatch("mse", "targets do not match predictions"));
        }
        let n = targets.len() as f64;
        let diff: Vec<f64> = t.to_f64().iter().zip(targets).map(|(p, y)| p - y).collect();
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        Ok(self.push(
            "mse",
            Tensor::scalar(T::of(loss)),
            &[pred],
            move |g, _, grads| {
                if let Some(d) = grads.slot(pred) {
                    let g0 = g[0].to_f64().unwrap_or(f64::NAN);
                    d.iter_mut()
                        .zip(&diff)
                        .for_each(|(d, &e)| *d += T::of(g0 * 2.0 * e / n));
                }
            },
        ))
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}

/// Interpolation weights for a `res × res` grid whose nodes sit at pixel
/// centres `lo + (i + ½)·(hi − lo)/res`; positions past the outer centres are
/// clamped. Grid node `(x, y)` is column `offset + y·res + x` of a matrix
/// with `ncols` columns, so several grids can be stacked in one matrix.
pub fn bilinear_weights<T: Scalar>(
    uv: &[[f64; 2]],
    res: usize,
    lo: f64,
    hi: f64,
    offset: usize,
    ncols: usize,
) -> SparseMatrix<T> {
    let mut s = SparseMatrix::new(ncols);
    for p in uv {
        push_bilinear(&mut s, p, res, lo, hi, offset);
        s.finish_row();
    }
    s
}

/// Appends the four bilinear taps of `p` to the current row of `s`.
pub fn push_bilinear<T: Scalar>(
    s: &mut SparseMatrix<T>,
    p: &[f64; 2],
    res: usize,
    lo: f64,
    hi: f64,
    offset: usize,
) {
    let axis = |u: f64| -> (usize, usize, f64) {
        let f = ((u - lo) / (hi - lo) * res as f64 - 0.5).clamp(0.0, (res - 1) as f64);
        // snap positions that land on a node so node lookups are exact
        let f = if (f - f.round()).abs() < 1e-12 {
            f.round()
        } else {
            f
        };
        if res == 1 {
            return (0, 0, 0.0);
        }
        let i0 = (f.floor() as usize).min(res - 2);
        (i0, i0 + 1, f - i0 as f64)
    };
    let (x0, x1, tx) = axis(p[0]);
    let (y0, y1, ty) = axis(p[1]);
    for (y, wy) in [(y0, 1.0 - ty), (y1, ty)] {
        for (x, wx) in [(x0, 1.0 - tx), (x1, tx)] {
            let w = wx * wy;
            if w != 0.0 {
                s.push(offset + y * res + x, T::of(w));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
        Tensor::matrix(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn check_gradient(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
        let rel = crate::nn::gradcheck::op_gradient_error(&inputs, f);
        assert!(rel < 1e-4, "relative gradient error {rel}");
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn scatter_add_example() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.scatter_add(x, &[0, 0, 1], 2).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 3.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::<f64>::new();
        let x = g.constant(
            Tensor::matrix(
                20,
                5,
                (0..100).map(|_| rng.random_range(-30.0..30.0)).collect(),
            )
            .unwrap(),
        );
        let y = g.softmax(x).unwrap();
        for i in 0..20 {
            assert!((g.value(y).row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn segmented_max_ignores_order_within_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, 12, 3);
        let seg: Vec<usize> = (0..12).map(|i| i % 4).collect();
        let mut perm: Vec<usize> = (0..12).collect();
        perm.reverse();
        perm.swap(0, 5);
        let px = Tensor::matrix(
            12,
            3,
            perm.iter().flat_map(|&i| x.row(i).to_vec()).collect(),
        )
        .unwrap();
        let pseg: Vec<usize> = perm.iter().map(|&i| seg[i]).collect();
        let mut g = Graph::<f64>::new();
        let (a, b) = (g.constant(x), g.constant(px));
        let ya = g.segmented_max(a, &seg, 5).unwrap();
        let yb = g.segmented_max(b, &pseg, 5).unwrap();
        assert_eq!(g.value(ya), g.value(yb));
        assert!(g.value(ya).row(4).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scatter_and_gather_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let index: Vec<usize> = (0..30).map(|_| rng.random_range(0..7)).collect();
        let x = rand_tensor(&mut rng, 30, 4);
        let y = rand_tensor(&mut rng, 7, 4);
        let mut g = Graph::<f64>::new();
        let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
        let ax = g.scatter_add(xv, &index, 7).unwrap();
        let aty = g.gather(yv, index.clone()).unwrap();
        let lhs: f64 = g
            .value(ax)
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .data()
            .iter()
            .zip(g.value(aty).data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn weighted_gather_backward_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = SparseMatrix::<f64>::new(6);
        for _ in 0..9 {
            for _ in 0..rng.random_range(0..4) {
                s.push(rng.random_range(0..6), rng.random_range(-1.0..1.0));
            }
            s.finish_row();
        }
        let x = rand_tensor(&mut rng, 6, 2);
        let y = rand_tensor(&mut rng, 9, 2);
        let mut g = Graph::<f64>::new();
        let xv = g.variable(x.clone());
        let sx = g.weighted_gather(xv, Arc::new(s)).unwrap();
        let yv = g.constant(y.clone());
        let p = g.mul(sx, yv).unwrap();
        let l = g.sum(p);
        g.backward(l).unwrap();
        // ⟨Sx, y⟩ = ⟨x, Sᵀy⟩ and the gradient of the left side is Sᵀy.
        let lhs = g.value(l).data()[0];
        let rhs: f64 = x
            .data()
            .iter()
            .zip(g.grad(xv).unwrap())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn bilinear_hits_nodes_exactly_and_sums_constant_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let res = 4;
        let grid = rand_tensor(&mut rng, res * res, 3);
        let node = |i: usize| -0.1 + (i as f64 + 0.5) * 1.2 / res as f64;
        let mut g = Graph::<f64>::new();
        let gv = g.constant(grid.clone());
        let uv: Vec<[f64; 2]> = (0..res)
            .flat_map(|y| (0..res).map(move |x| [node(x), node(y)]))
            .collect();
        let out = g.bilinear_interpolate(gv, &uv, res, -0.1, 1.1).unwrap();
        assert_eq!(g.value(out), &grid);
    }

    #[test]
    fn bilinear_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let res = 5;
        let grid = rand_tensor(&mut rng, res * res, 2);
        let uv: Vec<[f64; 2]> = (0..50)
            .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let mut g = Graph::<f64>::new();
        let gv = g.constant(grid.clone());
        let out = g.bilinear_interpolate(gv, &uv, res, -0.1, 1.1).unwrap();
        for (q, p) in uv.iter().enumerate() {
            // independent formulation: distance-based tent weights over all nodes
            for ch in 0..2 {
                let mut expect = 0.0;
                for y in 0..res {
                    for x in 0..res {
                        let cell = 1.2 / res as f64;
                        let fx = ((p[0] + 0.1) / cell - 0.5).clamp(0.0, (res - 1) as f64);
                        let fy = ((p[1] + 0.1) / cell - 0.5).clamp(0.0, (res - 1) as f64);
                        let w = (1.0 - (fx - x as f64).abs()).max(0.0)
                            * (1.0 - (fy - y as f64).abs()).max(0.0);
                        expect += w * grid.row(y * res + x)[ch];
                    }
                }
                assert!((g.value(out).row(q)[ch] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_examples() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let ce = g.cross_entropy(logits, &[0, 1]).unwrap();
        assert!((g.value(ce).data()[0] - 2f64.ln()).abs() < 1e-15);

        let probs = g.constant(Tensor::matrix(1, 2, vec![0.1, 0.9]).unwrap());
        let focal = g.focal_loss(probs, &[1], 2.0, 1.0).unwrap();
        let ce_p = -(0.9f64).ln();
        assert!((g.value(focal).data()[0] - 0.01 * ce_p).abs() < 1e-15);

        let sure = g.constant(Tensor::matrix(1, 2, vec![-40.0, 40.0]).unwrap());
        let ce = g.cross_entropy(sure, &[1]).unwrap();
        assert!(g.value(ce).data()[0] < 1e-30);
    }

    #[test]
    fn non_finite_forward_is_reported_with_op() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::matrix(1, 1, vec![1e308]).unwrap());
        let y = g.scale(x, 10.0);
        let l = g.sum(y);
        assert_eq!(
            g.backward(l),
            Err(NnError::NonFinite { op: "scale".into() })
        );
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        assert!(matches!(g.matmul(a, b), Err(NnError::ShapeMismatch { .. })));
        assert!(g.add(a, b).is_ok());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_tensor(&mut rng, 4, 3);
        let b = rand_tensor(&mut rng, 3, 5);
        let c = rand_tensor(&mut rng, 4, 3);
        let row = rand_tensor(&mut rng, 1, 3);
        let idx: Vec<usize> = vec![2, 0, PAD, 3, 3, 1];
        let seg = vec![0, 2, 2, 1];

        check_gradient(vec![a.clone(), b.clone()], |g, v| {
            g.matmul(v[0], v[1]).unwrap()
        });
        check_gradient(vec![a.clone(), c.clone()], |g, v| {
            g.add(v[0], v[1]).unwrap()
        });
        check_gradient(vec![a.clone(), c.clone()], |g, v| {
            g.sub(v[0], v[1]).unwrap()
        });
        check_gradient(vec![a.clone(), c.clone()], |g, v| {
            g.mul(v[0], v[1]).unwrap()
        });
        check_gradient(vec![a.clone(), row.clone()], |g, v| {
            g.add_row(v[0], v[1]).unwrap()
        });
        check_gradient(
            vec![a.clone(), b.clone(), rand_tensor(&mut rng, 1, 5)],
            |g, v| g.affine(v[0], v[1], v[2]).unwrap(),
        );
        check_gradient(vec![a.clone()], |g, v| g.scale(v[0], -1.7));
        check_gradient(vec![a.clone(), c.clone()], |g, v| {
            g.concat_cols(&[v[0], v[1], v[0]]).unwrap()
        });
        check_gradient(vec![a.clone(), b.clone()], |g, v| {
            let t = g.reshape(v[1], 5, 3).unwrap();
            g.concat_rows(&[v[0], t]).unwrap()
        });
        check_gradient(vec![a.clone()], |g, v| g.relu(v[0]));
        check_gradient(vec![a.clone()], |g, v| g.leaky_relu(v[0], 0.2));
        check_gradient(vec![a.clone()], |g, v| g.softmax(v[0]).unwrap());
        check_gradient(vec![a.clone()], |g, v| g.max_axis(v[0], 0).unwrap());
        check_gradient(vec![a.clone()], |g, v| g.max_axis(v[0], 1).unwrap());
        check_gradient(vec![a.clone()], |g, v| {
            g.segmented_max(v[0], &seg, 3).unwrap()
        });
        check_gradient(vec![a.clone()], |g, v| {
            g.scatter_add(v[0], &seg, 3).unwrap()
        });
        check_gradient(vec![a.clone()], |g, v| g.gather(v[0], idx.clone()).unwrap());
        check_gradient(vec![rand_tensor(&mut rng, 9, 2)], |g, v| {
            g.bilinear_interpolate(v[0], &[[0.3, 0.7], [0.9, 0.1], [-0.2, 0.5]], 3, -0.1, 1.1)
                .unwrap()
        });
        check_gradient(vec![a.clone()], |g, v| g.sum(v[0]));
        check_gradient(vec![a.clone()], |g, v| g.mean(v[0]));
        check_gradient(vec![a.clone()], |g, v| {
            g.cross_entropy(v[0], &[0, 2, 1, 1]).unwrap()
        });
        let probs = Tensor::matrix(3, 2, vec![0.2, 0.8, 0.6, 0.4, 0.35, 0.65]).unwrap();
        check_gradient(vec![probs.clone()], |g, v| {
            g.focal_loss(v[0], &[1, 1, 0], 2.0, 0.25).unwrap()
        });
        check_gradient(vec![probs], |g, v| {
            g.focal_loss(v[0], &[1, 1, 0], 0.0, 1.0).unwrap()
        });
        check_gradient(vec![rand_tensor(&mut rng, 5, 1)], |g, v| {
            g.mse(v[0], &[0.0, 1.0, 1.0, 0.0, 0.5]).unwrap()
        });
        // a small composition: softmax(relu(a·b + bias))
        check_gradient(vec![a, b, rand_tensor(&mut rng, 1, 5)], |g, v| {
            let m = g.matmul(v[0], v[1]).unwrap();
            let m = g.add_row(m, v[2]).unwrap();
            let r = g.leaky_relu(m, 0.1);
            g.softmax(r).unwrap()
        });
    }
}
