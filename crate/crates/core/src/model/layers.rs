//! Index construction and small building blocks shared by the encoders.

use std::sync::Arc;

use crate::nn::{Graph, NnError, ParameterStore, Scalar, SparseMatrix, Var, PAD};

/// `x·W + b` with parameters `{name}.w`, `{name}.b`.
pub(crate) fn linear<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    name: &str,
    x: Var,
) -> Result<Var, NnError> {
    let w = g.param(store, &format!("{name}.w"))?;
    let b = g.param(store, &format!("{name}.b"))?;
    g.affine(x, w, b)
}

/// Stack of linear layers `{prefix}{i}` each followed by ReLU.
pub(crate) fn mlp<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    prefix: &str,
    layers: usize,
    mut x: Var,
) -> Result<Var, NnError> {
    for i in 0..layers {
        let y = linear(g, store, &format!("{prefix}{i}"), x)?;
        x = g.relu(y);
    }
    Ok(x)
}

/// For every row in each building range `offsets[b]..offsets[b+1]`, the
/// global indices of its `k` nearest rows in that range (itself included),
/// sorted by distance then index. Returns a row-major `n × k` table.
pub(crate) fn knn_within<T: Scalar>(
    feats: &[T],
    cols: usize,
    offsets: &[usize],
    k: usize,
) -> Vec<usize> {
    let n = offsets.last().copied().unwrap_or(0);
    let mut out = vec![0usize; n * k];
    for w in offsets.windows(2) {
        let (s, e) = (w[0], w[1]);
        let m = e - s;
        if m == 0 {
            continue;
        }
        let f = &feats[s * cols..e * cols];
        let norms: Vec<T> = f
            .chunks(cols.max(1))
            .map(|r| r.iter().map(|&x| x * x).sum())
            .collect();
        let mut gram = vec![T::zero(); m * m];
        T::gemm(
            m,
            cols,
            m,
            f,
            cols as isize,
            1,
            f,
            1,
            cols as isize,
            T::zero(),
            &mut gram,
            m as isize,
        );
        let mut row: Vec<(T, usize)> = Vec::with_capacity(m);
        let cmp = |a: &(T, usize), b: &(T, usize)| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        let kk = k.min(m);
        for i in 0..m {
            row.clear();
            row.extend(
                (0..m).map(|j| (norms[i] + norms[j] - (gram[i * m + j] + gram[i * m + j]), j)),
            );
            if kk < m {
                row.select_nth_unstable_by(kk - 1, cmp);
            }
            row[..kk].sort_unstable_by(cmp);
            for (slot, &(_, j)) in out[(s + i) * k..(s + i + 1) * k]
                .iter_mut()
                .zip(row[..kk].iter().cycle())
            {
                *slot = s + j;
            }
        }
    }
    out
}

/// Row of pixel `(y, x)` of image `img` in a stack of `res × res` images.
fn pixel(img: usize, res: usize, y: usize, x: usize) -> usize {
    (img * res + y) * res + x
}

/// im2col gather index for a 3×3 same-padded convolution: output row
/// `p·9 + t` is tap `t` of pixel `p`, or [`PAD`] outside the image.
pub(crate) fn conv3x3_index(images: usize, res: usize) -> Arc<[usize]> {
    let mut idx = Vec::with_capacity(images * res * res * 9);
    for img in 0..images {
        for y in 0..res {
            for x in 0..res {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                        if (0..res as i64).contains(&yy) && (0..res as i64).contains(&xx) {
                            idx.push(pixel(img, res, yy as usize, xx as usize));
                        } else {
                            idx.push(PAD);
                        }
                    }
                }
            }
        }
    }
    idx.into()
}

/// 2×2 average pooling from `res` to `res / 2`.
pub(crate) fn avg_pool_matrix<T: Scalar>(images: usize, res: usize) -> Arc<SparseMatrix<T>> {
    let half = res / 2;
    let mut s = SparseMatrix::new(images * res * res);
    let q = T::of(0.25);
    for img in 0..images {
        for y in 0..half {
            for x in 0..half {
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    s.push(pixel(img, res, 2 * y + dy, 2 * x + dx), q);
                }
                s.finish_row();
            }
        }
    }
    Arc::new(s)
}

/// Nearest-neighbour upsampling from `res / 2` to `res`.
pub(crate) fn upsample_index(images: usize, res: usize) -> Arc<[usize]> {
    let half = res / 2;
    let mut idx = Vec::with_capacity(images * res * res);
    for img in 0..images {
        for y in 0..res {
            for x in 0..res {
                idx.push(pixel(img, half, y / 2, x / 2));
            }
        }
    }
    idx.into()
}

/// 3×3 convolution (same padding) over stacked images, then ReLU.
pub(crate) fn conv3x3<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    name: &str,
    x: Var,
    index: &Arc<[usize]>,
) -> Result<Var, NnError> {
    let (pixels, c) = g.shape(x);
    let cols = g.gather(x, index.clone())?;
    let patches = g.reshape(cols, pixels, 9 * c)?;
    let y = linear(g, store, name, patches)?;
    Ok(g.relu(y))
}
